#!/usr/bin/env python3
"""Train the three base learner kinds and check their gradients numerically.

Base learners are one-vs-rest multi-label classifiers: a sigmoid per tag.
Two are linear (logistic loss or squared hinge), one is a small MLP with
inverted dropout. All of them train in float64 with hand-written gradients,
so finite_diff_check can compare every analytic gradient block against
central differences; anything above 1e-4 relative error would be a bug.
"""

from __future__ import annotations

import numpy as np

from stacktag.learners import (
    TrainConfig,
    finite_diff_check,
    linear_loss_and_grads,
    mlp_loss_and_grads,
    train_linear,
    train_mlp,
)

rng = np.random.default_rng(11)
n, d, tags = 120, 10, 4
weights_true = rng.normal(size=(tags, d))
x = rng.normal(size=(n, d))
y = (x @ weights_true.T > 0.0).astype(np.float64)

cfg = TrainConfig(learning_rate=0.05, epochs=30, optimizer="adam")

print("training three one-vs-rest learners on the same toy problem:")
models = {
    "logistic": train_linear(x, y, tags, loss_kind="logistic", cfg=cfg, seed=0),
    "squared_hinge": train_linear(x, y, tags, loss_kind="squared_hinge", cfg=cfg, seed=0),
    "mlp[16]": train_mlp(x, y, tags, hidden=[16], dropout=0.1, cfg=cfg, seed=0),
}
for name, model in models.items():
    probs = model.predict_proba(x)
    accuracy = float(((probs >= 0.5) == y).mean())
    first, last = model.loss_history[0], model.loss_history[-1]
    print(f"  {name:14s} loss {first:.4f} -> {last:.4f}   train acc {accuracy:.3f}")

# Gradient checks run on fresh, untrained models so no weight sits in a
# degenerate spot. The MLP check disables dropout: the loss must be
# deterministic while parameters are nudged by epsilon.
print("\nfinite-difference gradient checks (epsilon 1e-5):")
check_x, check_y = x[:12], y[:12]

linear = train_linear(check_x, check_y, tags, cfg=TrainConfig(epochs=1), seed=3)
report = finite_diff_check(
    lambda: linear_loss_and_grads(linear, check_x, check_y, l2=0.01),
    dict(linear.parameter_blocks()),
)
print(f"  logistic       max rel err {report.max_rel_error:.2e}  ok={report.ok}")

mlp = train_mlp(check_x, check_y, tags, hidden=[6, 5], cfg=TrainConfig(epochs=1), seed=3)
report = finite_diff_check(
    lambda: mlp_loss_and_grads(mlp, check_x, check_y, l2=0.001, train=False),
    dict(mlp.parameter_blocks()),
)
print(f"  mlp[6,5]       max rel err {report.max_rel_error:.2e}  ok={report.ok}")
for block, err in sorted(report.per_block.items()):
    print(f"    {block:12s} {err:.2e}")
