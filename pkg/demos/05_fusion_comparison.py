#!/usr/bin/env python3
"""Compare stacking against four feature-fusion baselines on one split.

The fusion baselines combine modalities before classification: raw
concatenation, and sum / max / attention pooling over shared projections.
Stacking instead trains per-modality learners and combines their
out-of-fold probabilities. On data where one modality actively conflicts
with the labels half the time, stacking degrades more gracefully than
concatenation because the meta layer sees per-modality confidences and can
discount the unreliable block.

The margin is real but modest, and it only appears once the per-modality
learners are trained long enough to be confident. Underfit base learners
hand the meta layer noisy out-of-fold probabilities, and then plain
concatenation wins instead. That is why this script trains 64-unit MLPs
for 60 epochs on 2000 samples; expect it to run for several seconds.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from stacktag import harness
from stacktag.config import parse_config

config = parse_config({
    "seed": 1,
    "folds": 5,
    "holdout_fraction": 0.25,
    "dataset": {"synth": {
        "n": 2000, "tags": 20, "extra_dim": 0, "tags_per_sample": [1, 3],
        "modalities": [
            {"name": "visual", "dim": 32,
             "informative_tags": list(range(10)), "noise_sigma": 0.3},
            {"name": "sound", "dim": 24,
             "informative_tags": list(range(10, 20)), "noise_sigma": 0.3},
            {"name": "text", "dim": 32, "conflict_rate": 0.5,
             "noise_sigma": 0.3},
        ],
    }},
    "modalities": {m: {"kind": "mlp", "hidden": [64],
                       "train": {"epochs": 60, "learning_rate": 1e-3}}
                   for m in ("visual", "sound", "text")},
    "meta": {"hidden": [512, 256], "dropout": 0.3,
             "train": {"epochs": 30, "learning_rate": 1e-3}},
    "fusion": {"hidden": [64], "train": {"epochs": 60, "learning_rate": 1e-3}},
    "metric": {"top_k": 20},
})

out_dir = Path(tempfile.mkdtemp(prefix="stacktag_demo_"))
report = harness.cmd_compare_fusion(config, out_dir, threads=1)

print(f"\n{'strategy':12s} {'accuracy':>9s} {'gap':>8s}")
for row in report.rows:
    print(f"{row.name:12s} {row.accuracy:9.4f} {row.gap:8.4f}")

stacked, concat = report.row("stacked"), report.row("concat")
print(f"\nstacked - concat GAP difference: {stacked.gap - concat.gap:+.4f}")
print(f"report files written to {out_dir} (rerunning reproduces the "
      "numbers byte-identically)")
