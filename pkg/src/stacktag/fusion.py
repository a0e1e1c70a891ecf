"""Four fusion baselines trained end-to-end: concat, sum-pooling,
max-pooling, and gated attention over per-modality linear projections.

concat feeds the raw concatenated features straight to the classifier MLP.
The other three first project every modality to a common width p
(projections learned jointly with the classifier): sum_pool adds the
projections, max_pool takes the elementwise max (gradient routed to the
first argmax), and attention mixes them with weights
alpha = softmax_i(<u, tanh(V_i z_i)>). All gradients are hand-derived so
the whole model passes finite-difference checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergenceError, ValidationError
from .learners import (
    MlpModel,
    TrainConfig,
    _bce_loss_and_dscores,
    _make_optimizer,
    build_mlp,
    glorot_uniform,
)

log = logging.getLogger(__name__)

FUSION_KINDS = ("concat", "sum_pool", "max_pool", "attention")
DEFAULT_PROJECTION_CAP = 256


def default_projection_dim(dims: Sequence[int], cap: int = DEFAULT_PROJECTION_CAP) -> int:
    return min(min(dims), cap)


@dataclass
class FusionModel:
    kind: str
    modalities: list[str]
    dims: list[int]
    classifier: MlpModel
    proj_w: list[np.ndarray] = field(default_factory=list)  # each (p, d_i)
    proj_b: list[np.ndarray] = field(default_factory=list)  # each (p,)
    att_v: list[np.ndarray] = field(default_factory=list)  # each (p, p)
    att_u: np.ndarray | None = None  # (p,)

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ValidationError(f"unknown fusion kind {self.kind!r}")
        if len(self.modalities) != len(self.dims) or not self.modalities:
            raise ValidationError("one dimension per modality; at least one modality")
        if self.kind != "concat" and len(self.proj_w) != len(self.modalities):
            raise ValidationError(f"{self.kind} needs one projection per modality")
        if self.kind == "attention" and (len(self.att_v) != len(self.modalities) or self.att_u is None):
            raise ValidationError("attention needs per-modality gate matrices and a shared gate vector")

    @property
    def projection_dim(self) -> int | None:
        return None if self.kind == "concat" else self.proj_w[0].shape[0]

    @property
    def fused_dim(self) -> int:
        return sum(self.dims) if self.kind == "concat" else self.projection_dim

    @property
    def tag_count(self) -> int:
        return self.classifier.tag_count

    def _gather(self, features: dict[str, np.ndarray]) -> list[np.ndarray]:
        mats = []
        n = None
        for name, d in zip(self.modalities, self.dims):
            if name not in features:
                raise ValidationError(f"missing features for modality {name!r}")
            x = np.asarray(features[name], dtype=np.float64)
            if x.ndim != 2 or x.shape[1] != d:
                raise ValidationError(f"modality {name!r} must be (n, {d}), got {x.shape}")
            if n is None:
                n = x.shape[0]
            elif x.shape[0] != n:
                raise ValidationError(f"modality {name!r} has {x.shape[0]} rows, expected {n}")
            mats.append(x)
        return mats

    def fuse_with_cache(self, features: dict[str, np.ndarray]) -> tuple[np.ndarray, dict]:
        mats = self._gather(features)
        if self.kind == "concat":
            return np.hstack(mats), {"mats": mats}
        z = [x @ w.T + b for x, w, b in zip(mats, self.proj_w, self.proj_b)]
        cache: dict = {"mats": mats, "z": z}
        if self.kind == "sum_pool":
            return np.sum(z, axis=0), cache
        if self.kind == "max_pool":
            stacked = np.stack(z)  # (M, n, p)
            winner = stacked.argmax(axis=0)  # first argmax on ties
            cache["winner"] = winner
            return np.take_along_axis(stacked, winner[None], axis=0)[0], cache
        h = [np.tanh(zi @ vi.T) for zi, vi in zip(z, self.att_v)]
        gates = np.stack([hi @ self.att_u for hi in h], axis=1)  # (n, M)
        shifted = gates - gates.max(axis=1, keepdims=True)
        expg = np.exp(shifted)
        alpha = expg / expg.sum(axis=1, keepdims=True)
        cache.update(h=h, alpha=alpha)
        fused = np.zeros_like(z[0])
        for i, zi in enumerate(z):
            fused += alpha[:, i : i + 1] * zi
        return fused, cache

    def fuse(self, features: dict[str, np.ndarray]) -> np.ndarray:
        """Fused feature matrix for aligned per-modality inputs."""
        fused, _ = self.fuse_with_cache(features)
        return fused

    def attention_weights(self, features: dict[str, np.ndarray]) -> np.ndarray:
        if self.kind != "attention":
            raise ValidationError(f"{self.kind} has no attention weights")
        _, cache = self.fuse_with_cache(features)
        return cache["alpha"]

    def forward(
        self,
        features: dict[str, np.ndarray],
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, dict]:
        fused, cache = self.fuse_with_cache(features)
        scores, cls_cache = self.classifier.forward(fused, train=train, rng=rng)
        cache["cls"] = cls_cache
        return scores, cache

    def predict_proba(self, features: dict[str, np.ndarray]) -> np.ndarray:
        fused, _ = self.fuse_with_cache(features)
        return self.classifier.predict_proba(fused)

    def backward(self, cache: dict, dscores: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every parameter given d(loss)/d(classifier scores)."""
        cls_gw, cls_gb, dfused = self.classifier.backward(cache["cls"], dscores)
        grads = {}
        for i, (gw, gb) in enumerate(zip(cls_gw, cls_gb)):
            grads[f"cls_w{i}"] = gw
            grads[f"cls_b{i}"] = gb
        if self.kind == "concat":
            return grads
        mats = cache["mats"]
        z = cache["z"]
        m = len(mats)
        if self.kind == "sum_pool":
            dz = [dfused for _ in range(m)]
        elif self.kind == "max_pool":
            winner = cache["winner"]
            dz = [dfused * (winner == i) for i in range(m)]
        else:
            alpha = cache["alpha"]
            h = cache["h"]
            # direct path: fused = sum_i alpha_i * z_i
            dz = [dfused * alpha[:, i : i + 1] for i in range(m)]
            dalpha = np.stack([(dfused * z[i]).sum(axis=1) for i in range(m)], axis=1)
            inner = (alpha * dalpha).sum(axis=1, keepdims=True)
            dgates = alpha * (dalpha - inner)  # softmax backward
            du = np.zeros_like(self.att_u)
            for i in range(m):
                dg_i = dgates[:, i : i + 1]
                du += (dg_i * h[i]).sum(axis=0)
                dpre = dg_i * self.att_u * (1.0 - h[i] ** 2)
                grads[f"att_v{i}"] = dpre.T @ z[i]
                dz[i] = dz[i] + dpre @ self.att_v[i]
            grads["att_u"] = du
        for i in range(m):
            grads[f"proj_w{i}"] = dz[i].T @ mats[i]
            grads[f"proj_b{i}"] = dz[i].sum(axis=0)
        return grads

    def parameter_blocks(self) -> list[tuple[str, np.ndarray]]:
        blocks = []
        for i, (w, b) in enumerate(zip(self.proj_w, self.proj_b)):
            blocks.append((f"proj_w{i}", w))
            blocks.append((f"proj_b{i}", b))
        for i, v in enumerate(self.att_v):
            blocks.append((f"att_v{i}", v))
        if self.att_u is not None:
            blocks.append(("att_u", self.att_u))
        for name, arr in self.classifier.parameter_blocks():
            blocks.append((f"cls_{name}", arr))
        return blocks


def build_fusion(
    kind: str,
    modality_dims: dict[str, int] | Sequence[tuple[str, int]],
    tags: int,
    hidden: Sequence[int] = (64,),
    dropout: float = 0.0,
    projection_dim: int | None = None,
    seed: int = 0,
) -> FusionModel:
    if isinstance(modality_dims, dict):
        pairs = list(modality_dims.items())
    else:
        pairs = list(modality_dims)
    if not pairs:
        raise ValidationError("need at least one modality")
    names = [p[0] for p in pairs]
    dims = [int(p[1]) for p in pairs]
    if kind not in FUSION_KINDS:
        raise ValidationError(f"unknown fusion kind {kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    proj_w: list[np.ndarray] = []
    proj_b: list[np.ndarray] = []
    att_v: list[np.ndarray] = []
    att_u = None
    if kind == "concat":
        width = sum(dims)
    else:
        p = projection_dim if projection_dim is not None else default_projection_dim(dims)
        if p < 1:
            raise ValidationError(f"projection dimension must be >= 1, got {p}")
        width = p
        for d in dims:
            proj_w.append(glorot_uniform(rng, p, d))
            proj_b.append(np.zeros(p))
        if kind == "attention":
            for _ in dims:
                att_v.append(glorot_uniform(rng, p, p))
            att_u = rng.uniform(-np.sqrt(6.0 / (p + 1)), np.sqrt(6.0 / (p + 1)), size=p)
    classifier = build_mlp(width, hidden, tags, dropout, seed)
    return FusionModel(kind, names, dims, classifier, proj_w, proj_b, att_v, att_u)


def fusion_loss_and_grads(
    model: FusionModel,
    features: dict[str, np.ndarray],
    y: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    scores, cache = model.forward(features, train=train, rng=rng)
    loss, dscores = _bce_loss_and_dscores(scores, y)
    return loss, model.backward(cache, dscores)


def train_fusion(
    features: dict[str, np.ndarray],
    targets: Sequence[frozenset],
    tags: int,
    kind: str,
    hidden: Sequence[int] = (64,),
    dropout: float = 0.0,
    projection_dim: int | None = None,
    cfg: TrainConfig | None = None,
    seed: int = 0,
) -> FusionModel:
    """End-to-end training of projections, gates, and classifier as one model."""
    cfg = cfg if cfg is not None else TrainConfig()
    names = list(features)
    mats = {k: np.asarray(v, dtype=np.float64) for k, v in features.items()}
    counts = {k: v.shape[0] for k, v in mats.items()}
    if len(set(counts.values())) > 1:
        raise ValidationError(f"modalities disagree on sample count: {counts}")
    n = next(iter(counts.values()))
    if len(targets) != n:
        raise ValidationError(f"{len(targets)} target rows for {n} samples")
    y = np.zeros((n, tags), dtype=np.float64)
    for i, pos in enumerate(targets):
        for t in pos:
            y[i, t] = 1.0
    model = build_fusion(
        kind, [(k, mats[k].shape[1]) for k in names], tags,
        hidden=hidden, dropout=dropout, projection_dim=projection_dim, seed=seed,
    )
    params = dict(model.parameter_blocks())
    opt = _make_optimizer(cfg, params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mask_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = {k: mats[k][idx] for k in names}
            _, grads = fusion_loss_and_grads(model, batch, y[idx], train=True, rng=mask_rng)
            opt.step(grads)
        loss, _ = fusion_loss_and_grads(model, mats, y, train=False)
        if not np.isfinite(loss) or loss > cfg.divergence_threshold:
            raise DivergenceError(f"training diverged at epoch {epoch}: loss {loss}", epoch)
        history.append(loss)
    model.classifier.loss_history = history
    return model
