"""Piecewise-linear temporal nodes: curve evaluation, hand-written gradients,
coefficient-predicting heads, direct curve fitting and small trainable networks."""

__version__ = "0.1.0"

from .errors import ContractError, DomainError, FitError, OracleError, TrainingError
from .plf import (SegmentSet, SmoothingWeights, active_segment, eval_smoothed, eval_unsmoothed,
                  integral_unsmoothed, normalize_eval, smoothing_weights)
from .grad import GradientRecord, backprop_chain, grad_normalized, grad_smoothed, grad_unsmoothed
from .heads import (ConvNodeWeights, NodeWeights, VBarMode, conv_node_forward, layer_forward,
                    node_forward, predict_coefficients)
from .samples import SampleSet
from .fit import (FitConfig, FitReport, fit_gradient_step, fit_piecewise_linear, segment_regression_oracle,
                  smoothed_l2_loss, sup_error, toy_experiment, uniform_sampling_constant)
