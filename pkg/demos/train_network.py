"""
Training a small network of piecewise-linear nodes
==================================================

Each node predicts its own curve from the input and is evaluated at the query
time. Here one dense layer learns a field of hidden piecewise-linear curves,
and the ablation compares the same model with and without normalization.
"""

from ppln import net, synth

data = synth.make_regression_task("pwl-field", synth.TaskSizes(samples=1000, hidden_n=3), seed=0)
train, val = data.split(0.2, seed=0)

spec = net.ModelSpec(input_shape=(4,), layers=[{"type": "dense", "out": 1, "n": 3, "bias": True}], T=20.0)
config = net.TrainConfig(optimizer="adam", lr=0.01, epochs=15, batch_size=32, seed=0)

params, report = net.train(spec, config, train, val=val)
print(f"train loss {report.train_loss[0]:.4f} -> {report.final_train:.4f}")
print(f"val loss   {report.val_loss[0]:.4f} -> {report.final_val:.4f}")

###############################################################################
# The ablation reuses the split and seed and flips one switch at a time.

ablation = net.ablate(spec, config, data, {"normalization": [True, False], "n": [3, 6]})
for row in ablation.rows():
    print(row)
