"""Command-line front end.

Every command resolves its settings as flags over ``--config`` over defaults,
writes plot-ready data files plus one ``manifest.json``, and exits 0 on
success, 1 on a runtime failure and 2 on a usage error. A manifest can be fed
back through ``--config`` to repeat the run.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, checks, fit, io, net, synth
from .errors import ContractError, DomainError, FitError, OracleError, TrainingError
from .heads import conv_predict_coefficients, softmax
from .plf import SegmentSet, potential, sizes_to_endpoints
from .samples import SampleSet

OUT_ENV = "PPLN_OUT_DIR"
CURVE_POINTS = 1001


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# settings resolution
# ---------------------------------------------------------------------------

def _on_off(text):
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_file(path):
    try:
        data = io.read_json(path)
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    except DomainError as exc:
        raise UsageError(f"--config: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("--config: expected a JSON object")
    if "command" in data and "config" in data:
        return data["config"]
    return data


def resolve(defaults, args):
    """Flags that were given win over the config file, which wins over defaults."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _config_file(args.config)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def _out_dir(args, command):
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "ppln-out")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out, command, cfg, inputs, outputs, started):
    io.write_json(out / "manifest.json", {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "version": __version__,
        "inputs": {k: io.sha256(v) for k, v in sorted(inputs.items()) if v},
        "outputs": {name: io.sha256(out / name) for name in sorted(outputs)},
        "wall_time": time.perf_counter() - started,
    })


def _write_csv(path, header, columns):
    cols = [np.asarray(c, dtype=float) for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

SYNTH_DEFAULTS = {"segments": 2, "samples": 200, "noise": 0.0, "noise_model": "uniform",
                  "placement": "equispaced", "min_gap": 0.1, "continuous": False, "seed": 0}


def cmd_synth(args):
    cfg = resolve(SYNTH_DEFAULTS, args)
    if int(cfg["segments"]) < 1:
        raise UsageError("--segments must be a positive integer")
    if int(cfg["samples"]) < 2:
        raise UsageError("--samples must be at least 2")
    if float(cfg["noise"]) < 0:
        raise UsageError("--noise must be non-negative")
    started = time.perf_counter()
    spec = synth.SynthSpec(n_true=int(cfg["segments"]), samples=int(cfg["samples"]), noise=cfg["noise_model"],
                           noise_level=float(cfg["noise"]), placement=cfg["placement"],
                           min_gap=float(cfg["min_gap"]), continuous=bool(cfg["continuous"]),
                           seed=int(cfg["seed"]))
    truth = synth.random_segment_set(spec)
    samples = synth.sample_from(truth, spec)
    out = _out_dir(args, "synth")
    (out / "truth.json").write_text(truth.to_json() + "\n")
    (out / "samples.csv").write_text(samples.to_csv())
    _manifest(out, "synth", cfg, {}, ["truth.json", "samples.csv"], started)
    print(f"wrote {out}/truth.json, samples.csv (noise bound {samples.noise_bound:g})")
    return 0


FIT_DEFAULTS = {"input": None, "truth": None, "segments": 2, "t0": 10.0, "gamma_t": 2.0, "t_max": 1e4,
                "eps_grad": 1e-5, "max_inner_iters": 2000, "eta0": fit.FitConfig.eta0, "init": "warm",
                "init_endpoints": None, "normalization": False, "smoothing": True, "seed": 0}


def _load_truth(path):
    try:
        return SegmentSet.from_json(Path(path).read_text(), min_gap=0.0)
    except (OSError, ValueError) as exc:
        raise DomainError(f"{path}: cannot load truth: {exc}") from None


def cmd_fit(args):
    cfg = resolve(FIT_DEFAULTS, args)
    if not cfg["input"]:
        raise UsageError("--input is required")
    if int(cfg["segments"]) < 1:
        raise UsageError("--segments must be a positive integer")
    cfg["input"] = _abs(cfg["input"])
    cfg["truth"] = _abs(cfg["truth"])
    started = time.perf_counter()
    try:
        text = Path(cfg["input"]).read_text()
    except OSError as exc:
        raise DomainError(f"{cfg['input']}: {exc.strerror}") from None
    samples = SampleSet.from_csv(text)
    truth = _load_truth(cfg["truth"]) if cfg["truth"] else None
    config = fit.FitConfig(n=int(cfg["segments"]), T0=float(cfg["t0"]), gamma_T=float(cfg["gamma_t"]),
                           T_max=float(cfg["t_max"]), eps_grad=float(cfg["eps_grad"]),
                           max_inner_iters=int(cfg["max_inner_iters"]), eta0=float(cfg["eta0"]),
                           init=cfg["init"], seed=int(cfg["seed"]),
                           init_endpoints=tuple(cfg["init_endpoints"]) if cfg["init_endpoints"] else None,
                           normalization=bool(cfg["normalization"]), smoothing=bool(cfg["smoothing"]))
    theta, report = fit.fit_piecewise_linear(samples, config, truth=truth)
    curve = fit.fitted_curve(theta, report.v_bar, config.normalization)
    out = _out_dir(args, "fit")
    (out / "theta.json").write_text(curve.to_json() + "\n")
    io.write_json(out / "report.json", report.to_dict())
    grid = np.linspace(0.0, 1.0, CURVE_POINTS)
    cols, header = [grid, curve(grid)], ["tau", "fitted"]
    if truth is not None:
        cols.append(truth(grid))
        header.append("truth")
    _write_csv(out / "curve.csv", header, cols)
    _manifest(out, "fit", cfg, {"input": cfg["input"], "truth": cfg["truth"]},
              ["theta.json", "report.json", "curve.csv"], started)
    msg = f"fit {report.iterations} steps, endpoints {np.round(theta.t[1:-1], 6).tolist()}"
    if report.sup_error is not None:
        msg += f", sup_error {report.sup_error:.3g}"
    print(msg)
    return 0


TOY_DEFAULTS = {"noise": 0.02, "samples": 100, "seed": 0}


def cmd_toy(args):
    cfg = resolve(TOY_DEFAULTS, args)
    if float(cfg["noise"]) < 0:
        raise UsageError("--noise must be non-negative")
    started = time.perf_counter()
    rep = fit.toy_experiment(fit.ToyConfig(samples=int(cfg["samples"]), noise=float(cfg["noise"]),
                                           seed=int(cfg["seed"])))
    out = _out_dir(args, "toy")
    names = []
    tau = rep.samples.taus
    for v in rep.variants:
        name = f"curve_{v.name}.csv"
        init = v.report.initial_theta
        _write_csv(out / name, ["tau", "sample", "truth", "initial", "final"],
                   [tau, rep.samples.vs, rep.truth(tau), init(tau), v.curve(tau)])
        names.append(name)
    io.write_json(out / "summary.json", rep.summary())
    names.append("summary.json")
    _manifest(out, "toy", cfg, {}, names, started)
    for name, row in rep.summary().items():
        print(f"{name:24s} sup_error {row['sup_error']:.4g}  endpoint_moved {row['endpoint_moved']}")
    return 0


GRADCHECK_DEFAULTS = {"trials": 100, "seed": 0, "module": None}


def cmd_gradcheck(args):
    cfg = resolve(GRADCHECK_DEFAULTS, args)
    if int(cfg["trials"]) < 1:
        raise UsageError("--trials must be a positive integer")
    if cfg["module"] is not None and cfg["module"] not in checks.MODULES:
        raise UsageError(f"--module must be one of {', '.join(checks.MODULES)}")
    started = time.perf_counter()
    modules = checks.MODULES if cfg["module"] is None else (cfg["module"],)
    results = checks.run_gradcheck(int(cfg["trials"]), int(cfg["seed"]), modules)
    out = _out_dir(args, "gradcheck")
    io.write_json(out / "gradcheck.json", [r.to_dict() for r in results])
    _manifest(out, "gradcheck", cfg, {}, ["gradcheck.json"], started)
    for r in results:
        print(f"{r.module:6s} {r.op:18s} max rel err {r.max_rel_error:.3e} (tol {r.tol:g}) "
              f"{'ok' if r.ok else 'FAIL'}")
    bad = [r for r in results if not r.ok]
    for r in bad:
        print(f"failing: {r.op} worst at trial {r.worst_trial}, coordinate {r.worst_coord}", file=sys.stderr)
    return 1 if bad else 0


TRAIN_DEFAULTS = {"model": None, "task": "pwl-field", "data": None, "samples": 2000, "k": 4, "hidden_n": 3,
                  "times": "uniform", "optimizer": "adam", "lr": 0.01, "loss": "l2", "epochs": 40,
                  "batch_size": 32, "milestones": [], "decay": 0.1, "seed": 0, "normalization": None,
                  "smoothing_t": None, "segments": 3, "bias": True}
ABLATE_DEFAULTS = dict(TRAIN_DEFAULTS, axes=["normalization"], n_values=None, seeds=None,
                       val_fraction=0.2)
TRAIN_KEYS = ("optimizer", "lr", "loss", "epochs", "batch_size", "milestones", "decay", "seed")


def _model_dict(cfg, input_dim):
    if cfg["model"] is None:
        return net.ModelSpec((input_dim,), [{"type": "dense", "out": 1, "n": int(cfg["segments"]),
                                             "bias": bool(cfg["bias"])}]).to_dict()
    if isinstance(cfg["model"], dict):
        return cfg["model"]
    try:
        return io.read_json(cfg["model"])
    except OSError as exc:
        raise UsageError(f"--model: cannot read {cfg['model']}: {exc.strerror}") from None


def _dataset(cfg):
    if cfg["data"]:
        try:
            return io.dataset_from_csv(Path(cfg["data"]).read_text())
        except OSError as exc:
            raise DomainError(f"{cfg['data']}: {exc.strerror}") from None
    if cfg["task"] not in synth.TASKS:
        raise UsageError(f"--task must be one of {', '.join(synth.TASKS)}")
    sizes = synth.TaskSizes(samples=int(cfg["samples"]), k=int(cfg["k"]), hidden_n=int(cfg["hidden_n"]),
                            times=cfg["times"])
    return synth.make_regression_task(cfg["task"], sizes, int(cfg["seed"]))


def _prepare_train(args, defaults):
    cfg = resolve(defaults, args)
    if cfg["data"]:
        cfg["data"] = _abs(cfg["data"])
    data = _dataset(cfg)
    try:
        spec = net.ModelSpec.from_dict(_model_dict(cfg, data.X.shape[1]))
    except (TypeError, ContractError, DomainError) as exc:
        raise UsageError(f"--model: {exc}") from None
    if cfg["normalization"] is not None:
        spec = spec.with_flags(normalization=bool(cfg["normalization"]))
    if cfg["smoothing_t"] is not None:
        spec = spec.with_flags(T=float(cfg["smoothing_t"]) if float(cfg["smoothing_t"]) > 0 else None)
    cfg["model"] = spec.to_dict()
    try:
        tcfg = net.TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS})
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    return cfg, data, spec, tcfg


def cmd_train(args):
    cfg, data, spec, tcfg = _prepare_train(args, TRAIN_DEFAULTS)
    started = time.perf_counter()
    params, report = net.train(spec, tcfg, data)
    out = _out_dir(args, "train")
    io.save_params(params, out / "params.json", out / "params.bin")
    io.write_json(out / "model.json", spec.to_dict())
    io.write_json(out / "report.json", report.to_dict())
    _manifest(out, "train", cfg, {"data": cfg["data"]},
              ["params.json", "params.bin", "model.json", "report.json"], started)
    print(f"train loss {report.train_loss[0]:.4g} -> {report.final_train:.4g} over {tcfg.epochs} epochs")
    return 0


def cmd_ablate(args):
    cfg, _, spec, tcfg = _prepare_train(args, ABLATE_DEFAULTS)
    unknown = set(cfg["axes"]) - {"normalization", "smoothing", "n"}
    if unknown:
        raise UsageError(f"--axes: unknown axes {sorted(unknown)}")
    axes = {}
    if "normalization" in cfg["axes"]:
        axes["normalization"] = [True, False]
    if "smoothing" in cfg["axes"]:
        axes["smoothing"] = [True, False]
    if "n" in cfg["axes"] or cfg["n_values"]:
        axes["n"] = [int(v) for v in (cfg["n_values"] or [3, 6])]
    seeds = cfg["seeds"] or [int(cfg["seed"])]
    started = time.perf_counter()
    rows = []
    for seed in seeds:
        data = _dataset(dict(cfg, seed=seed))
        rep = net.ablate(spec, net.TrainConfig(**{**tcfg.to_dict(), "seed": int(seed)}), data, axes,
                         float(cfg["val_fraction"]))
        for row in rep.rows():
            rows.append({"seed": int(seed), **row})
    out = _out_dir(args, "ablate")
    lines = ["seed,normalization,smoothing,n,train_loss,val_loss,error"]
    for r in rows:
        lines.append(",".join([str(r["seed"]), str(r["normalization"]).lower(), str(r["smoothing"]).lower(),
                               str(r["n"]), repr(r["train_loss"]), repr(r["val_loss"]),
                               (r["error"] or "").replace(",", ";")]))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    io.write_json(out / "report.json", rows)
    _manifest(out, "ablate", cfg, {"data": cfg["data"]}, ["ablation.csv", "report.json"], started)
    for r in rows:
        print(f"seed {r['seed']} norm {r['normalization']!s:5s} smooth {r['smoothing']!s:5s} n {r['n']} "
              f"train {r['train_loss']} val {r['val_loss']}{'  ERROR ' + r['error'] if r['error'] else ''}")
    return 0


COEFFS_DEFAULTS = {"params": None, "model": None, "count": 5, "seed": 0, "zero": False, "node": 0,
                   "points": 201}


def cmd_coeffs(args):
    cfg = resolve(COEFFS_DEFAULTS, args)
    if not cfg["params"]:
        raise UsageError("--params is required")
    cfg["params"] = _abs(cfg["params"])
    if not Path(cfg["params"]).is_file():
        raise UsageError(f"--params: no such file {cfg['params']}")
    model_path = cfg["model"] or str(Path(cfg["params"]).parent / "model.json")
    if not Path(model_path).is_file():
        raise UsageError(f"--model: no such file {model_path}")
    cfg["model"] = _abs(model_path)
    if int(cfg["count"]) < 1 or int(cfg["points"]) < 2:
        raise UsageError("--count must be >= 1 and --points >= 2")
    started = time.perf_counter()
    spec = net.ModelSpec.from_dict(io.read_json(cfg["model"]))
    params = io.load_params(cfg["params"])
    first = spec.layers[0]
    if first["type"] not in ("dense", "conv"):
        raise UsageError("coefficient dumps need a PPLN first layer")
    rng = synth.stream(int(cfg["seed"]), "coeffs")
    grid = np.linspace(0.0, 1.0, int(cfg["points"]))
    node = int(cfg["node"])
    if node >= int(first["out"]):
        raise UsageError(f"--node must be below {first['out']}")
    out = _out_dir(args, "coeffs")
    names, sets = [], []
    p = params[0]
    for c in range(int(cfg["count"])):
        x = np.zeros(spec.input_shape) if cfg["zero"] else rng.normal(size=spec.input_shape)
        if first["type"] == "dense":
            xin = np.append(x, 1.0) if first.get("bias") else x
            theta, v_bar = _dense_coeffs(p, node, xin, spec)
        else:
            field = conv_predict_coefficients(net._conv_weights(first, p), x, spec.vmode)
            i, j = field.m.shape[1] // 2, field.m.shape[2] // 2
            theta, v_bar = field.segment_set(node, i, j), float(field.v_bar[node, i, j])
        vals = potential(theta.m, theta.b, theta.t, grid, spec.T)
        if spec.normalization:
            vals = vals - float(0.5 * theta.m @ (theta.t[1:] ** 2 - theta.t[:-1] ** 2)
                                + theta.b @ np.diff(theta.t)) + v_bar
        name = f"curve_{c:03d}.csv"
        _write_csv(out / name, ["tau", "value"], [grid, vals])
        names.append(name)
        sets.append({"input": x.reshape(-1).tolist(), "v_bar": v_bar, **theta.to_dict()})
    io.write_json(out / "coefficients.json", sets)
    names.append("coefficients.json")
    _manifest(out, "coeffs", cfg, {"params": cfg["params"], "model": cfg["model"]}, names, started)
    print(f"wrote {len(sets)} curves to {out}")
    return 0


def _dense_coeffs(p, node, x, spec):
    W_m, W_b, W_s, w_V = (p[k][node] for k in ("W_m", "W_b", "W_s", "w_V"))
    m = np.tanh(W_m @ x)
    s = softmax(W_s @ x)
    v_bar = float(w_V @ x) if spec.vmode.regressed else float(spec.observed_vbar)
    return SegmentSet(m, W_b @ x, sizes_to_endpoints(s), min_gap=0.0), v_bar


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ppln", description="Piecewise-linear temporal nodes: data, fits, training.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON settings file or a previous run's manifest.json")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="generate a ground-truth curve and noisy samples")
    common(s)
    s.add_argument("--segments", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--noise", type=float, help="noise level (half-width or sigma)")
    s.add_argument("--noise-model", dest="noise_model", choices=["uniform", "gaussian"])
    s.add_argument("--placement", choices=["equispaced", "uniform"])
    s.add_argument("--min-gap", dest="min_gap", type=float)
    s.add_argument("--continuous", type=_on_off, metavar="on|off")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit a piecewise-linear curve to samples.csv")
    common(f)
    f.add_argument("--input")
    f.add_argument("--truth")
    f.add_argument("--segments", type=int)
    f.add_argument("--t0", type=float)
    f.add_argument("--gamma-t", dest="gamma_t", type=float)
    f.add_argument("--t-max", dest="t_max", type=float)
    f.add_argument("--eps-grad", dest="eps_grad", type=float)
    f.add_argument("--max-inner-iters", dest="max_inner_iters", type=int)
    f.add_argument("--eta0", type=float)
    f.add_argument("--init", choices=["warm", "uniform"])
    f.add_argument("--init-endpoints", dest="init_endpoints", type=_floats)
    f.add_argument("--normalization", type=_on_off, metavar="on|off")
    f.add_argument("--smoothing", type=_on_off, metavar="on|off")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("toy", help="two-segment normalization x smoothing experiment")
    common(t)
    t.add_argument("--noise", type=float)
    t.add_argument("--samples", type=int)
    t.set_defaults(func=cmd_toy)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    common(g)
    g.add_argument("--trials", type=int)
    g.add_argument("--module", choices=list(checks.MODULES))
    g.set_defaults(func=cmd_gradcheck)

    for name, func, helptext in (("train", cmd_train, "train a PPLN network"),
                                 ("ablate", cmd_ablate, "normalization / smoothing / n sweeps")):
        a = sub.add_parser(name, help=helptext)
        common(a)
        a.add_argument("--model", help="ModelSpec JSON (default: one dense PPLN layer)")
        a.add_argument("--task", choices=list(synth.TASKS))
        a.add_argument("--data", help="dataset CSV with x*, tau and y* columns")
        a.add_argument("--samples", type=int)
        a.add_argument("--k", type=int)
        a.add_argument("--hidden-n", dest="hidden_n", type=int)
        a.add_argument("--times", choices=["uniform", "grid"])
        a.add_argument("--segments", type=int)
        a.add_argument("--bias", type=_on_off, metavar="on|off")
        a.add_argument("--optimizer", choices=["sgd", "adam", "rmsprop"])
        a.add_argument("--lr", type=float)
        a.add_argument("--loss", choices=["l1", "l2"])
        a.add_argument("--epochs", type=int)
        a.add_argument("--batch-size", dest="batch_size", type=int)
        a.add_argument("--milestones", type=_ints)
        a.add_argument("--decay", type=float)
        a.add_argument("--normalization", type=_on_off, metavar="on|off")
        a.add_argument("--smoothing-t", dest="smoothing_t", type=float, help="temperature; 0 turns smoothing off")
        if name == "ablate":
            a.add_argument("--axes", type=lambda s: [v for v in s.split(",") if v])
            a.add_argument("--n-values", dest="n_values", type=_ints)
            a.add_argument("--seeds", type=_ints)
            a.add_argument("--val-fraction", dest="val_fraction", type=float)
        a.set_defaults(func=func)

    c = sub.add_parser("coeffs", help="dump predicted curves of a trained model")
    common(c)
    c.add_argument("--params", help="params.json written by train")
    c.add_argument("--model", help="model.json (default: next to params)")
    c.add_argument("--count", type=int)
    c.add_argument("--zero", action="store_const", const=True, help="use all-zero inputs")
    c.add_argument("--node", type=int)
    c.add_argument("--points", type=int)
    c.set_defaults(func=cmd_coeffs)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ppln {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ContractError, FitError, TrainingError, OracleError, OSError) as exc:
        print(f"ppln {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
