"""Scaled dot-product attention with reference key rescaling.

Keys of reference tokens are multiplied by ``gamma`` before the dot
product, which raises their logits and counteracts the loss of reference
attention mass as the number of target tokens grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mvprior.errors import ValidationError

DEFAULT_GAMMA = 1.2
# rescaling engages only above this many target views
GAMMA_TARGET_THRESHOLD = 25


@dataclass(frozen=True)
class AttentionBatch:
    queries: np.ndarray  # (tokens_q, dim)
    keys: np.ndarray  # (tokens, dim)
    values: np.ndarray  # (tokens, dim_v)
    reference_span: np.ndarray  # indices into keys
    gamma: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        k = np.asarray(self.keys, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
            raise ValidationError("queries, keys and values must be 2-D")
        if q.shape[1] == 0 or q.shape[1] != k.shape[1]:
            raise ValidationError("query/key dims must match and be positive")
        if k.shape[0] != v.shape[0]:
            raise ValidationError("keys and values need the same token count")
        for name, arr in (("queries", q), ("keys", k), ("values", v)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contain non-finite entries")
        span = np.unique(np.asarray(self.reference_span, dtype=np.int64).ravel())
        if span.size and (span.min() < 0 or span.max() >= k.shape[0]):
            raise ValidationError("reference span indexes past the key tokens")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "keys", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "reference_span", span)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def reference_mask(self) -> np.ndarray:
        m = np.zeros(self.keys.shape[0], dtype=bool)
        m[self.reference_span] = True
        return m

    def with_gamma(self, gamma: float) -> "AttentionBatch":
        return AttentionBatch(self.queries, self.keys, self.values, self.reference_span, gamma)


@dataclass(frozen=True)
class AttentionDiagnostics:
    weights: np.ndarray  # (tokens_q, tokens)
    reference_mass: np.ndarray  # (tokens_q,)
    entropy: np.ndarray  # (tokens_q,), nats


def softmax_attention(q, k, v):
    """Plain ``softmax(q k^T / sqrt(dim)) v``; returns ``(output, weights)``."""
    logits = (q @ k.T) / np.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ v, w


def attend(batch: AttentionBatch):
    keys = batch.keys.copy()
    keys[batch.reference_span] *= batch.gamma
    out, w = softmax_attention(batch.queries, keys, batch.values)
    ref_mass = w[:, batch.reference_mask].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(w > 0, w * np.log(w), 0.0)
    return out, AttentionDiagnostics(w, ref_mass, -plogp.sum(axis=1))


def default_gamma(n_targets: int, gamma: float = DEFAULT_GAMMA, threshold: int = GAMMA_TARGET_THRESHOLD) -> float:
    return gamma if n_targets > threshold else 1.0


def reference_mass_curve(batch: AttentionBatch, gammas):
    """Mean reference attention mass for each gamma."""
    curve = []
    for g in gammas:
        if not g > 0:
            raise ValidationError(f"gamma must be positive, got {g}")
        _, diag = attend(batch.with_gamma(g))
        curve.append((float(g), float(diag.reference_mass.mean())))
    return curve


def dilution_batch(n_ref: int, n_target: int, dim: int, seed, n_queries: int = 16, tokens_per_view: int = 1, max_target=None):
    """Synthetic batch with non-negative features, so every logit is
    positive. Target keys for a given seed are a prefix of one fixed pool,
    making batches for different ``n_target`` nested."""
    rng = np.random.default_rng(seed)
    max_target = max(n_target, max_target or 0)
    q = rng.uniform(0.0, 1.0, size=(n_queries, dim))
    k_ref = rng.uniform(0.0, 1.0, size=(n_ref * tokens_per_view, dim))
    k_pool = rng.uniform(0.0, 1.0, size=(max_target * tokens_per_view, dim))
    v_ref = rng.normal(size=(n_ref * tokens_per_view, dim))
    v_pool = rng.normal(size=(max_target * tokens_per_view, dim))
    m = n_target * tokens_per_view
    keys = np.concatenate([k_ref, k_pool[:m]])
    values = np.concatenate([v_ref, v_pool[:m]])
    return AttentionBatch(q, keys, values, np.arange(n_ref * tokens_per_view))


def dilution_experiment(n_ref: int, n_targets, dim: int = 16, seed=0, gammas=(1.0, DEFAULT_GAMMA), n_queries: int = 16):
    """Reference mass as the target count grows, for each gamma.

    Returns a list of row dicts with keys ``n_ref``, ``n_target``,
    ``gamma`` and ``reference_mass`` (mean over queries).
    """
    if n_ref < 1:
        raise ValidationError("need at least one reference token")
    n_targets = list(n_targets)
    top = max(n_targets, default=0)
    rows = []
    for m in n_targets:
        batch = dilution_batch(n_ref, m, dim, seed, n_queries=n_queries, max_target=top)
        for g, mass in reference_mass_curve(batch, gammas):
            rows.append({"n_ref": n_ref, "n_target": m, "gamma": g, "reference_mass": mass})
    return rows
