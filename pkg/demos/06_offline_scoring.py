#!/usr/bin/env python3
"""Produce a prediction file with the CLI verbs, then score it offline.

This is the full command-line loop a run goes through:

    stacktag synth   --config config.json --out data/
    stacktag train   --config config.json --out run/
    stacktag predict run/model data/manifest.json --out run/
    stacktag score   run/predictions.jsonl data/manifest.json --out run/

Predictions live in a JSON-lines file (one {sample_id, predictions} row per
sample, confidences descending), so scoring needs nothing but that file and
the dataset manifest. Exit codes: 0 ok, 2 invalid input, 3 I/O failure,
4 training divergence.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from stacktag.cli import main

root = Path(tempfile.mkdtemp(prefix="stacktag_demo_"))
config = {
    "seed": 12,
    "folds": 3,
    "dataset": {"synth": {
        "n": 120, "tags": 5, "extra_dim": 2, "tags_per_sample": [1, 2],
        "modalities": [
            {"name": "visual", "dim": 10, "noise_sigma": 0.2},
            {"name": "sound", "dim": 8, "noise_sigma": 0.3},
        ],
    }},
    "modalities": {m: {"kind": "logistic", "hidden": [],
                       "train": {"learning_rate": 0.1, "epochs": 15}}
                   for m in ("visual", "sound")},
    "meta": {"hidden": [16], "dropout": 0.1,
             "train": {"learning_rate": 0.01, "epochs": 15}},
    "metric": {"top_k": 5},
}
config_path = root / "config.json"
config_path.write_text(json.dumps(config, indent=2))

data_dir, run_dir = root / "data", root / "run"
for argv in (
    ["synth", "--config", str(config_path), "--out", str(data_dir)],
    ["train", "--config", str(config_path), "--out", str(run_dir)],
    ["predict", str(run_dir / "model"), str(data_dir / "manifest.json"),
     "--config", str(config_path), "--out", str(run_dir)],
):
    code = main(argv)
    assert code == 0, argv
    print(f"$ stacktag {' '.join(argv)}  -> exit {code}")

predictions = run_dir / "predictions.jsonl"
first = json.loads(predictions.read_text().splitlines()[0])
print(f"\nfirst prediction row: sample {first['sample_id']}")
for tag, confidence in first["predictions"][:3]:
    print(f"  tag {tag}: {confidence:.4f}")

print("\n$ stacktag score ...")
code = main(["score", str(predictions), str(data_dir / "manifest.json"),
             "--config", str(config_path), "--out", str(run_dir)])
assert code == 0

report = json.loads((run_dir / "score.json").read_text())
row = report["rows"][0]
print(f"\nscore report: accuracy={row['accuracy']:.4f} gap={row['gap']:.4f}")
print(f"config hash embedded in the report: {report['config_hash']}")
print(f"everything written under {root}")
