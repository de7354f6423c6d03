"""
Piecewise-linear curves, smoothing and normalization
====================================================

A node's temporal response is a handful of line segments on [0, 1]. This
walk-through evaluates one curve, blends it with a sigmoid temperature and
shifts it so its mean over time hits a chosen value.
"""

from ppln import SegmentSet, eval_smoothed, eval_unsmoothed, integral_unsmoothed, normalize_eval
from ppln.grad import grad_normalized, grad_unsmoothed

# two segments meeting at tau = 0.5: a rise followed by a fall
theta = SegmentSet(m=[1.0, -1.0], b=[0.0, 1.0], t=[0.0, 0.5, 1.0])
print("value at 0.25:", eval_unsmoothed(theta, 0.25))
print("value at 0.75:", eval_unsmoothed(theta, 0.75))

###############################################################################
# Smoothing blends each segment with its neighbours. Low temperatures blur the
# corner, high temperatures recover the sharp curve.

for T in (5.0, 50.0, 1e4):
    print(f"T={T:>7g}  value at 0.49: {eval_smoothed(theta, 0.49, T):.6f}")

###############################################################################
# Normalization subtracts the closed-form integral and adds a target mean, so
# the average of the output over time is exactly that target.

print("integral of theta:", integral_unsmoothed(theta))
print("normalized values:", [round(normalize_eval(theta, 2.0, x), 4) for x in (0.0, 0.25, 0.5, 1.0)])
shifted = theta.replace(b=theta.b + 2.0 - integral_unsmoothed(theta))
print("mean of the normalized curve:", integral_unsmoothed(shifted))

###############################################################################
# Without normalization only the active segment receives gradient, and the
# endpoints receive none. Normalization spreads gradient over every
# coefficient. The endpoint picks up gradient wherever the curve jumps, so
# this example uses a curve with a step at its breakpoint.

jumpy = SegmentSet(m=[1.0, -1.0], b=[0.0, 0.5], t=[0.0, 0.5, 1.0])
print("unsmoothed d_m:", grad_unsmoothed(jumpy, 0.25).d_m)
print("unsmoothed d_t:", grad_unsmoothed(jumpy, 0.25).d_t)
print("normalized d_m:", grad_normalized(jumpy, 0.25).d_m)
print("normalized d_t:", grad_normalized(jumpy, 0.25).d_t)
