"""Comparison harnesses and command implementations behind the CLI verbs.

Every command is deterministic given (config, seed): splits, fold
assignments, and per-unit training seeds are all derived from the global
seed, so reruns reproduce reports byte-for-byte (timing aside).
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from .config import MetricSettings, RunConfig, config_hash
from .data import (
    Dataset,
    assemble_dataset,
    load_labels,
    load_manifest,
    load_vocabulary,
    write_dataset,
)
from .errors import ValidationError
from .fusion import train_fusion
from .learners import train_linear, train_mlp
from .metrics import (
    RankedPrediction,
    gap,
    hamming_accuracy,
    read_predictions,
    top_k_predictions,
    write_predictions,
)
from .reports import EvalReport, ReportRow, report_timing, write_report
from .stacking import (
    LearnerSpec,
    load_stacked,
    predict_stacked_dataset,
    predict_stacked_proba,
    save_stacked,
    train_stacked,
)
from .synth import SynthConfig, derive_seed, synth_generate

log = logging.getLogger(__name__)


def holdout_split(
    n: int, fraction: float, seed: int, labeled_mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/eval split over the labeled samples, both sides non-empty."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"holdout fraction must lie in (0, 1), got {fraction}")
    eligible = np.arange(n) if labeled_mask is None else np.flatnonzero(labeled_mask)
    if len(eligible) < 2:
        raise ValidationError("need at least 2 labeled samples to split")
    rng = np.random.default_rng(derive_seed(seed, "holdout"))
    perm = rng.permutation(eligible)
    eval_count = min(max(1, int(round(len(eligible) * fraction))), len(eligible) - 1)
    eval_idx = np.sort(perm[:eval_count])
    train_idx = np.sort(perm[eval_count:])
    return train_idx, eval_idx


def category_map(dataset: Dataset) -> dict[int, int] | None:
    return dataset.vocabulary.category_of


def evaluate_probs(
    probs: np.ndarray,
    targets,
    metric: MetricSettings,
    category_of: dict[int, int] | None = None,
) -> tuple[float, float]:
    accuracy = hamming_accuracy(probs, targets, metric.threshold)
    preds = top_k_predictions(probs, metric.top_k)
    if metric.category_mode != "pooled" and category_of is None:
        raise ValidationError("per_category_sum scoring needs a vocabulary with categories")
    g = gap(preds, targets, metric.gap_config(), category_of)
    return accuracy, g


def load_dataset_for(cfg: RunConfig, seed: int | None = None) -> Dataset:
    seed = cfg.seed if seed is None else seed
    if cfg.dataset_manifest is not None:
        return assemble_dataset(load_manifest(cfg.dataset_manifest), cfg.pool_mode)
    synth_cfg = cfg.synth if cfg.synth is not None else SynthConfig()
    return synth_generate(synth_cfg, seed, min_folds=cfg.folds)


def _fit_spec(x, targets, tags: int, spec: LearnerSpec, seed: int):
    if spec.kind == "mlp":
        return train_mlp(
            x, targets, tags, hidden=spec.hidden, dropout=spec.dropout, cfg=spec.train, seed=seed
        )
    return train_linear(x, targets, tags, loss_kind=spec.kind, cfg=spec.train, seed=seed)


def _split_details(cfg: RunConfig, train_idx, eval_idx) -> dict:
    return {
        "holdout_fraction": cfg.holdout_fraction,
        "split_seed": cfg.seed,
        "train_count": int(len(train_idx)),
        "eval_count": int(len(eval_idx)),
    }


def run_fusion_experiment(
    dataset: Dataset,
    kind: str,
    train_idx: np.ndarray,
    eval_idx: np.ndarray,
    cfg: RunConfig,
    seed: int,
) -> ReportRow:
    """Train one fusion strategy end-to-end on the split; report its row."""
    train_feats = {m: fm.values[train_idx] for m, fm in dataset.features.items()}
    eval_feats = {m: fm.values[eval_idx] for m, fm in dataset.features.items()}
    train_targets = [dataset.targets[i] for i in train_idx]
    eval_targets = [dataset.targets[i] for i in eval_idx]
    model = train_fusion(
        train_feats,
        train_targets,
        dataset.tag_count,
        kind,
        hidden=cfg.fusion.hidden,
        dropout=cfg.fusion.dropout,
        projection_dim=cfg.fusion.projection_dim,
        cfg=cfg.fusion.train,
        seed=seed,
    )
    probs = model.predict_proba(eval_feats)
    accuracy, g = evaluate_probs(probs, eval_targets, cfg.metric, category_map(dataset))
    return ReportRow(kind, accuracy, g)


def _finish_report(
    command: str, cfg: RunConfig, rows: list[ReportRow], started: float,
    threads: int, out_dir, details: dict | None = None,
) -> EvalReport:
    report = EvalReport(
        command=command,
        config=cfg.raw,
        config_hash=cfg.hash,
        seed=cfg.seed,
        rows=rows,
        timing=report_timing(started, time.time(), threads),
        details=details or {},
    )
    paths = write_report(report, out_dir, command.replace("-", "_"))
    log.info("%s: wrote %s and %s", command, *paths)
    return report


def cmd_synth(cfg: RunConfig, seed: int, out_dir) -> Path:
    """Generate a synthetic dataset and write it in the on-disk formats."""
    if cfg.dataset_manifest is not None:
        raise ValidationError("synth requires a synth dataset section, not a manifest")
    synth_cfg = cfg.synth if cfg.synth is not None else SynthConfig()
    dataset = synth_generate(synth_cfg, seed, min_folds=cfg.folds)
    manifest_path = write_dataset(dataset, out_dir)
    log.info("synth: wrote %s (n=%d, tags=%d)", manifest_path, dataset.n, dataset.tag_count)
    return manifest_path


def cmd_train(cfg: RunConfig, out_dir, threads: int | None = None) -> EvalReport:
    """Train the stacked model on the full labeled dataset and save it."""
    started = time.time()
    threads = cfg.threads if threads is None else threads
    dataset = load_dataset_for(cfg)
    model = train_stacked(
        dataset,
        cfg.specs_for(dataset),
        k=cfg.folds,
        meta_hidden=cfg.meta.hidden,
        meta_dropout=cfg.meta.dropout,
        meta_train=cfg.meta.train,
        seed=cfg.seed,
        use_extra=cfg.use_extra,
        threads=threads,
    )
    save_stacked(model, Path(out_dir) / "model")
    labeled = np.flatnonzero(dataset.labeled_mask())
    features = {m: fm.values for m, fm in dataset.features.items()}
    probs = predict_stacked_proba(model, features, dataset.extra if model.use_extra else None)
    accuracy, g = evaluate_probs(
        probs[labeled], [dataset.targets[i] for i in labeled], cfg.metric, category_map(dataset)
    )
    rows = [ReportRow("train_self", accuracy, g)]
    return _finish_report("train", cfg, rows, started, threads, out_dir)


def cmd_compare_modalities(cfg: RunConfig, out_dir, threads: int | None = None) -> EvalReport:
    """One base learner per single modality, all on a shared holdout split."""
    started = time.time()
    threads = cfg.threads if threads is None else threads
    dataset = load_dataset_for(cfg)
    train_idx, eval_idx = holdout_split(
        dataset.n, cfg.holdout_fraction, cfg.seed, dataset.labeled_mask()
    )
    train_targets = [dataset.targets[i] for i in train_idx]
    eval_targets = [dataset.targets[i] for i in eval_idx]
    specs = cfg.specs_for(dataset)
    rows = []
    for modality in dataset.features:
        spec = next(s for m, s in specs if m == modality)
        x = dataset.features[modality].values.astype(np.float64)
        model = _fit_spec(
            x[train_idx], train_targets, dataset.tag_count, spec,
            derive_seed(cfg.seed, "single", modality),
        )
        probs = model.predict_proba(x[eval_idx])
        accuracy, g = evaluate_probs(probs, eval_targets, cfg.metric, category_map(dataset))
        rows.append(ReportRow(modality, accuracy, g))
    return _finish_report(
        "compare-modalities", cfg, rows, started, threads, out_dir,
        _split_details(cfg, train_idx, eval_idx),
    )


def _stacked_row(
    name: str,
    dataset: Dataset,
    specs,
    train_idx: np.ndarray,
    eval_idx: np.ndarray,
    cfg: RunConfig,
    use_extra: bool,
    threads: int,
    seed: int,
) -> ReportRow:
    train_set = dataset.subset(train_idx)
    model = train_stacked(
        train_set,
        specs,
        k=cfg.folds,
        meta_hidden=cfg.meta.hidden,
        meta_dropout=cfg.meta.dropout,
        meta_train=cfg.meta.train,
        seed=seed,
        use_extra=use_extra,
        threads=threads,
    )
    eval_feats = {m: dataset.features[m].values[eval_idx] for m, _ in specs}
    extra = dataset.extra[eval_idx] if model.use_extra else None
    probs = predict_stacked_proba(model, eval_feats, extra)
    eval_targets = [dataset.targets[i] for i in eval_idx]
    accuracy, g = evaluate_probs(probs, eval_targets, cfg.metric, category_map(dataset))
    return ReportRow(name, accuracy, g)


def cmd_compare_combinations(cfg: RunConfig, out_dir, threads: int | None = None) -> EvalReport:
    """Stacked models over a ladder of modality subsets, shared split."""
    started = time.time()
    threads = cfg.threads if threads is None else threads
    dataset = load_dataset_for(cfg)
    train_idx, eval_idx = holdout_split(
        dataset.n, cfg.holdout_fraction, cfg.seed, dataset.labeled_mask()
    )
    all_specs = cfg.specs_for(dataset)
    rows = []
    for entry in cfg.ladder_for(dataset):
        modalities = [name for name in entry if name != "extra"]
        use_extra = "extra" in entry
        if use_extra and dataset.extra_dim == 0:
            raise ValidationError("ladder requests extra features but the dataset has none")
        specs = [(m, s) for m, s in all_specs if m in modalities]
        if not specs:
            raise ValidationError(f"ladder entry {entry!r} matches no modalities")
        rows.append(_stacked_row(
            "+".join(entry), dataset, specs, train_idx, eval_idx, cfg,
            use_extra, threads, cfg.seed,
        ))
    return _finish_report(
        "compare-combinations", cfg, rows, started, threads, out_dir,
        _split_details(cfg, train_idx, eval_idx),
    )


def cmd_compare_fusion(cfg: RunConfig, out_dir, threads: int | None = None) -> EvalReport:
    """Stacking versus the four fusion baselines on one split.

    Extra features are withheld from both sides here so every strategy sees
    exactly the same modality inputs.
    """
    started = time.time()
    threads = cfg.threads if threads is None else threads
    dataset = load_dataset_for(cfg)
    train_idx, eval_idx = holdout_split(
        dataset.n, cfg.holdout_fraction, cfg.seed, dataset.labeled_mask()
    )
    rows = [_stacked_row(
        "stacked", dataset, cfg.specs_for(dataset), train_idx, eval_idx, cfg,
        use_extra=False, threads=threads, seed=derive_seed(cfg.seed, "fusion", "stacked"),
    )]
    for kind in cfg.fusion.kinds:
        rows.append(run_fusion_experiment(
            dataset, kind, train_idx, eval_idx, cfg, derive_seed(cfg.seed, "fusion", kind)
        ))
    return _finish_report(
        "compare-fusion", cfg, rows, started, threads, out_dir,
        _split_details(cfg, train_idx, eval_idx),
    )


def cmd_predict(model_dir, manifest_path, out_path, metric: MetricSettings, pool_mode: str = "mean") -> Path:
    """Score a dataset with a saved stacked model into a prediction file."""
    model = load_stacked(model_dir)
    dataset = assemble_dataset(load_manifest(manifest_path), pool_mode)
    preds = predict_stacked_dataset(model, dataset, metric.top_k)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(preds, out_path)
    log.info("predict: wrote %d prediction lines to %s", len(preds), out_path)
    return out_path


def score_predictions(
    preds: list[RankedPrediction],
    manifest_path,
    metric: MetricSettings,
) -> tuple[float, float]:
    """Offline scoring of prediction rows against a manifest's labels."""
    manifest = load_manifest(manifest_path)
    vocabulary = load_vocabulary(manifest.vocabulary_file)
    targets = load_labels(manifest.label_file, len(vocabulary))
    n, tags = len(manifest.sample_ids), len(vocabulary)
    if len(targets) != n:
        raise ValidationError(
            f"{manifest.label_file}: {len(targets)} label rows for {n} sample ids"
        )
    index_of = {sid: i for i, sid in enumerate(manifest.sample_ids)}
    aligned: list[RankedPrediction] = [RankedPrediction([], sid) for sid in manifest.sample_ids]
    seen = set()
    for rp in preds:
        if rp.sample_id not in index_of:
            raise ValidationError(f"prediction for unknown sample_id {rp.sample_id!r}")
        if rp.sample_id in seen:
            raise ValidationError(f"duplicate prediction row for sample_id {rp.sample_id!r}")
        seen.add(rp.sample_id)
        for tag, _ in rp.items:
            if not 0 <= tag < tags:
                raise ValidationError(f"sample {rp.sample_id!r}: tag id {tag} outside 0..{tags - 1}")
        aligned[index_of[rp.sample_id]] = rp
    dense = np.zeros((n, tags), dtype=np.float64)
    for i, rp in enumerate(aligned):
        for tag, conf in rp.items:
            dense[i, tag] = conf
    accuracy = hamming_accuracy(dense, targets, metric.threshold)
    cat = vocabulary.category_of
    if metric.category_mode != "pooled" and cat is None:
        raise ValidationError("per_category_sum scoring needs a vocabulary with categories")
    g = gap(aligned, targets, metric.gap_config(), cat)
    return accuracy, g


def cmd_score(prediction_path, manifest_path, metric: MetricSettings, out_dir=None) -> EvalReport:
    """Score a prediction file offline; optionally persist the report."""
    started = time.time()
    preds = read_predictions(prediction_path)
    accuracy, g = score_predictions(preds, manifest_path, metric)
    raw = {
        "command": "score",
        "prediction_file": str(prediction_path),
        "manifest": str(manifest_path),
        "metric": {
            "top_k": metric.top_k,
            "category_mode": metric.category_mode,
            "threshold": metric.threshold,
        },
    }
    report = EvalReport(
        command="score",
        config=raw,
        config_hash=config_hash(raw),
        seed=0,
        rows=[ReportRow("score", accuracy, g)],
        timing=report_timing(started, time.time()),
    )
    if out_dir is not None:
        write_report(report, out_dir, "score")
    return report
