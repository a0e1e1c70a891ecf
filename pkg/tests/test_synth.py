"""Synthetic dataset generator: determinism, structure, signal content."""

from __future__ import annotations

import numpy as np
import pytest

from stacktag.errors import ValidationError
from stacktag.synth import (
    ModalitySpec,
    SynthConfig,
    SynthConfig as _Cfg,
    derive_seed,
    synth_generate,
    _signatures,
)


def _small_config(**overrides):
    base = dict(
        n=60,
        tags=6,
        modalities=(ModalitySpec("visual", 8), ModalitySpec("sound", 5)),
        extra_dim=2,
        tags_per_sample=(1, 2),
    )
    base.update(overrides)
    return SynthConfig(**base)


def test_derive_seed_is_stable_and_distinct():
    a = derive_seed(7, "visual", 0)
    assert a == derive_seed(7, "visual", 0)
    assert a != derive_seed(7, "visual", 1)
    assert a != derive_seed(8, "visual", 0)
    assert 0 <= a < 2**63


def test_generation_is_deterministic():
    cfg = _small_config()
    a = synth_generate(cfg, seed=11)
    b = synth_generate(cfg, seed=11)
    assert a.sample_ids == b.sample_ids
    assert a.targets == b.targets
    for name in a.features:
        assert a.features[name].values.tobytes() == b.features[name].values.tobytes()
    assert a.extra.tobytes() == b.extra.tobytes()


def test_different_seeds_differ():
    cfg = _small_config()
    a = synth_generate(cfg, seed=11)
    b = synth_generate(cfg, seed=12)
    assert a.features["visual"].values.tobytes() != b.features["visual"].values.tobytes()
    assert a.targets != b.targets


def test_shapes_and_ids():
    cfg = _small_config()
    ds = synth_generate(cfg, seed=0)
    assert ds.n == 60
    assert ds.tag_count == 6
    assert ds.features["visual"].values.shape == (60, 8)
    assert ds.features["sound"].values.shape == (60, 5)
    assert ds.extra.shape == (60, 2)
    assert ds.sample_ids[0] == "s000000"
    assert len(set(ds.sample_ids)) == 60
    assert ds.vocabulary.names[0] == "tag_0"


def test_tags_per_sample_bounds_hold():
    cfg = _small_config(n=200, tags_per_sample=(2, 4), tags=8)
    ds = synth_generate(cfg, seed=3)
    sizes = {len(t) for t in ds.targets}
    assert sizes <= {2, 3, 4}
    assert min(sizes) >= 2 and max(sizes) <= 4
    for t in ds.targets:
        assert all(0 <= int(x) < 8 for x in t)


def test_fully_labeled_by_default():
    ds = synth_generate(_small_config(), seed=1)
    assert ds.labeled_mask().all()


def test_unlabeled_fraction_drops_labels():
    cfg = _small_config(n=400, unlabeled_fraction=0.3)
    ds = synth_generate(cfg, seed=5)
    mask = ds.labeled_mask()
    frac = 1.0 - mask.mean()
    assert 0.2 < frac < 0.4
    assert ds.features["visual"].n == 400  # unlabeled rows keep their features


def test_categories_assigned_round_robin():
    cfg = _small_config(tags=7, categories=3)
    ds = synth_generate(cfg, seed=0)
    assert ds.vocabulary.categories == (0, 1, 2, 0, 1, 2, 0)


@pytest.mark.parametrize(
    "overrides",
    [
        dict(tags=1, tags_per_sample=(1, 1)),
        dict(n=5),  # below 2*k for default min_folds applied at call site
        dict(modalities=()),
        dict(modalities=(ModalitySpec("m", 8), ModalitySpec("m", 4))),
        dict(modalities=(ModalitySpec("m", 0),)),
        dict(modalities=(ModalitySpec("m", 8, noise_sigma=-0.1),)),
        dict(tags_per_sample=(0, 2)),
        dict(tags_per_sample=(3, 2)),
        dict(tags_per_sample=(1, 6)),  # hi must stay below tag count
        dict(conflict_rate=1.5),
        dict(modalities=(ModalitySpec("m", 8, informative_tags=(0, 9)),)),
        dict(extra_dim=-1),
        dict(unlabeled_fraction=1.0),
    ],
)
def test_invalid_configs_rejected(overrides):
    cfg = _small_config(**overrides)
    with pytest.raises(ValidationError):
        synth_generate(cfg, seed=0, min_folds=5)


def test_min_folds_bound_is_checked():
    cfg = _small_config(n=9)
    with pytest.raises(ValidationError):
        synth_generate(cfg, seed=0, min_folds=5)
    synth_generate(cfg, seed=0, min_folds=2)  # 9 >= 2*2 is fine


def test_noiseless_rows_are_signature_sums():
    cfg = _small_config(
        n=40,
        modalities=(ModalitySpec("visual", 8, noise_sigma=0.0),),
        extra_dim=0,
    )
    ds = synth_generate(cfg, seed=21)
    sig = _signatures(21, "visual", cfg.tags, 8)
    for i in range(ds.n):
        expected = np.zeros(8)
        for t in ds.targets[i]:
            expected += sig[t]
        assert np.allclose(ds.features["visual"].values[i], expected, atol=1e-6)


def test_informative_tags_limit_the_signal():
    cfg = _small_config(
        n=80,
        tags=6,
        modalities=(ModalitySpec("visual", 8, informative_tags=(0,), noise_sigma=0.0),),
        extra_dim=0,
    )
    ds = synth_generate(cfg, seed=4)
    sig = _signatures(4, "visual", 6, 8)
    for i in range(ds.n):
        if 0 in ds.targets[i]:
            assert np.allclose(ds.features["visual"].values[i], sig[0], atol=1e-6)
        else:
            assert np.allclose(ds.features["visual"].values[i], 0.0, atol=1e-6)


def test_conflict_rows_carry_a_wrong_signature():
    cfg = _small_config(
        n=50,
        tags=6,
        modalities=(ModalitySpec("visual", 8, noise_sigma=0.0),),
        conflict_rate=1.0,
        extra_dim=0,
    )
    ds = synth_generate(cfg, seed=9)
    sig = _signatures(9, "visual", 6, 8)
    for i in range(ds.n):
        row = ds.features["visual"].values[i]
        matches = [t for t in range(6) if np.allclose(row, sig[t], atol=1e-5)]
        assert len(matches) == 1
        assert matches[0] not in ds.targets[i]


def test_modality_conflict_rate_overrides_config_default():
    clean = ModalitySpec("clean", 8, noise_sigma=0.0, conflict_rate=0.0)
    cfg = _small_config(n=40, modalities=(clean,), conflict_rate=1.0, extra_dim=0)
    ds = synth_generate(cfg, seed=2)
    sig = _signatures(2, "clean", cfg.tags, 8)
    # with the override no row carries a wrong signature: all are target sums
    for i in range(ds.n):
        expected = np.sum(sig[sorted(ds.targets[i])], axis=0)
        assert np.allclose(ds.features["clean"].values[i], expected, atol=1e-6)


def test_single_tag_low_noise_is_linearly_decodable():
    cfg = _small_config(
        n=300,
        tags=6,
        modalities=(ModalitySpec("visual", 16, noise_sigma=0.05),),
        tags_per_sample=(1, 1),
        extra_dim=0,
    )
    ds = synth_generate(cfg, seed=13)
    sig = _signatures(13, "visual", 6, 16)
    scores = ds.features["visual"].values @ sig.T
    decoded = scores.argmax(axis=1)
    truth = np.array([next(iter(t)) for t in ds.targets])
    assert (decoded == truth).mean() >= 0.95


def test_extra_features_have_heterogeneous_scales():
    cfg = _small_config(n=500, extra_dim=3)
    ds = synth_generate(cfg, seed=0)
    means = np.abs(ds.extra).mean(axis=0)
    assert means[0] < means[1] < means[2]
    assert means[2] / means[0] > 10  # wildly different magnitudes, on purpose
