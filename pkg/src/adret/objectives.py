"""Training objectives over a batch similarity matrix.

The similarity matrix S is square with text anchors on rows, images on
columns, and positives on the diagonal. Two loss families are provided:

  - hard triplet: hinge with margin against the single hardest in-batch
    negative, in both retrieval directions, summed over the batch.
  - InfoNCE over a selected negative set, averaged over the batch, in both
    directions. The denominator includes the positive term alongside the
    selected negatives, which keeps the loss nonnegative and saturating.

The adaptive variant re-derives the negative-set size K every batch from two
batch statistics: alignment (mean positive similarity) and uniformity
(log-mean-exp of all pairwise similarities). Both are clamped to [0, 1] and
treated as plain numbers; no gradient flows through the schedule. A cosine
ramp maps their sum onto K, so an untrained batch (sum near 0) uses nearly
all in-batch negatives and a mature one (sum near 2) only the hardest one.

Each loss returns its gradient with respect to S alongside the value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Array, as_matrix

LOSS_MODES = ("hard-triplet", "infonce-adaptive", "infonce-fixed")


@dataclass(frozen=True)
class LossConfig:
    mode: str
    margin: float = 0.2
    temperature: float = 0.05
    fixed_k: Optional[int] = None

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ConfigError(f"loss mode {self.mode!r} not one of {LOSS_MODES}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.mode == "infonce-fixed" and (self.fixed_k is None or self.fixed_k < 1):
            raise ConfigError("infonce-fixed requires fixed_k >= 1")


@dataclass(frozen=True)
class BatchMaturity:
    """Per-batch schedule record: clamped statistics and the chosen K."""

    gamma_align: float
    gamma_uniform: float
    k_selected: int


@dataclass(frozen=True)
class NegativeSelection:
    """Per-anchor negative indices, one list per anchor, each of length K.

    ``text_to_image[i]`` holds column (image) indices for text anchor i;
    ``image_to_text[j]`` holds row (text) indices for image anchor j. Lists
    never contain the anchor's own index.
    """

    text_to_image: tuple[tuple[int, ...], ...]
    image_to_text: tuple[tuple[int, ...], ...]


def _square(s: Array, name: str) -> Array:
    s = as_matrix(s, name)
    if s.shape[0] != s.shape[1]:
        raise DimensionError(f"{name} must be square, got {s.shape}")
    return s


def hard_triplet_loss(s: Array, margin: float) -> tuple[float, Array]:
    """Hinge against the hardest in-batch negative, both directions, summed.

    Subgradient convention: an exactly-zero hinge contributes no gradient.
    """
    s = _square(s, "similarity matrix")
    b = s.shape[0]
    if b < 2:
        raise ValueError("hard_triplet_loss needs a batch of at least 2")
    idx = np.arange(b)
    masked = np.where(np.eye(b, dtype=bool), -np.inf, s)
    jhat = masked.argmax(axis=1)  # hardest negative image per text anchor
    ihat = masked.argmax(axis=0)  # hardest negative text per image anchor
    diag = s[idx, idx]
    h_row = margin - diag + s[idx, jhat]
    h_col = margin - diag + s[ihat, idx]
    act_row = h_row > 0
    act_col = h_col > 0
    loss = float(h_row[act_row].sum() + h_col[act_col].sum())
    grad = np.zeros_like(s)
    np.add.at(grad, (idx[act_row], jhat[act_row]), 1.0)
    np.add.at(grad, (idx[act_row], idx[act_row]), -1.0)
    np.add.at(grad, (ihat[act_col], idx[act_col]), 1.0)
    np.add.at(grad, (idx[act_col], idx[act_col]), -1.0)
    return loss, grad


def alignment(s: Array) -> float:
    """Mean similarity of the positive pairs (the diagonal)."""
    s = _square(s, "similarity matrix")
    return float(np.mean(np.diag(s)))


def uniformity(s: Array) -> float:
    """log of the mean of e^{s_ij} over all pairs.

    0 when similarities hover around zero (well spread), approaching 1 as
    the batch collapses toward all-similar embeddings.
    """
    s = _square(s, "similarity matrix")
    return float(np.log(np.mean(np.exp(s))))


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def adaptive_k(gamma_align: float, gamma_uniform: float, batch_size: int) -> int:
    """Map batch maturity onto a negative count via a cosine ramp.

    Both statistics are clamped to [0, 1]; their sum in [0, 2] is scaled to
    [0, pi/2], cosined down to [1, 0], multiplied by the batch size and
    floored. The result is clamped to [1, batch_size - 1].
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    total = clamp01(gamma_align) + clamp01(gamma_uniform)
    k_raw = math.floor(batch_size * math.cos(total * math.pi / 4.0))
    return max(1, min(k_raw, batch_size - 1))


def select_negatives(s: Array, k: int) -> NegativeSelection:
    """Hardest-K in-batch negatives per anchor, both directions.

    Candidates are ranked by similarity descending with ties broken by the
    smaller index; the anchor's own positive is excluded.
    """
    s = _square(s, "similarity matrix")
    b = s.shape[0]
    if not 1 <= k <= b - 1:
        raise ValueError(f"select_negatives: k={k} outside [1, {b - 1}]")
    t2i = []
    i2t = []
    for i in range(b):
        order = np.argsort(-s[i], kind="stable")
        t2i.append(tuple(int(j) for j in order if j != i)[:k])
        order = np.argsort(-s[:, i], kind="stable")
        i2t.append(tuple(int(j) for j in order if j != i)[:k])
    return NegativeSelection(tuple(t2i), tuple(i2t))


def info_nce_loss(s: Array, sel: NegativeSelection,
                  temperature: float) -> tuple[float, Array]:
    """Temperature-scaled contrastive loss over the selected negatives.

    Per anchor: -log(e^{pos/tau} / (e^{pos/tau} + sum_k e^{neg_k/tau})),
    computed via logsumexp. Each direction is averaged over the batch and the
    two directions are summed.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    s = _square(s, "similarity matrix")
    b = s.shape[0]
    if len(sel.text_to_image) != b or len(sel.image_to_text) != b:
        raise DimensionError(
            f"selection covers {len(sel.text_to_image)} anchors, batch is {b}")
    grad = np.zeros_like(s)
    loss_t2v = 0.0
    loss_v2t = 0.0
    for i in range(b):
        negs = list(sel.text_to_image[i])
        z = np.concatenate(([s[i, i]], s[i, negs])) / temperature
        zmax = z.max()
        e = np.exp(z - zmax)
        total = e.sum()
        loss_t2v += (zmax + math.log(total)) - z[0]
        p = e / total
        grad[i, i] += (p[0] - 1.0) / (b * temperature)
        np.add.at(grad, (i, negs), p[1:] / (b * temperature))

        negs = list(sel.image_to_text[i])
        z = np.concatenate(([s[i, i]], s[negs, i])) / temperature
        zmax = z.max()
        e = np.exp(z - zmax)
        total = e.sum()
        loss_v2t += (zmax + math.log(total)) - z[0]
        p = e / total
        grad[i, i] += (p[0] - 1.0) / (b * temperature)
        np.add.at(grad, (negs, i), p[1:] / (b * temperature))
    loss = loss_v2t / b + loss_t2v / b
    return float(loss), grad


def negatives_only_info_nce(s: Array, sel: NegativeSelection,
                            temperature: float) -> tuple[float, Array]:
    """Contrastive ratio with only the selected negatives in the denominator.

    Per anchor: -pos/tau + logsumexp(negs/tau). Unlike info_nce_loss this
    never saturates and can go negative: the positive keeps receiving a
    constant -1/tau pull however far it already clears the negatives. That
    sustained pull is what makes the adaptive objective keep tightening
    positive pairs after the hinge-style losses have gone quiet.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    s = _square(s, "similarity matrix")
    b = s.shape[0]
    if len(sel.text_to_image) != b or len(sel.image_to_text) != b:
        raise DimensionError(
            f"selection covers {len(sel.text_to_image)} anchors, batch is {b}")
    grad = np.zeros_like(s)
    loss = 0.0
    for i in range(b):
        negs = list(sel.text_to_image[i])
        z = s[i, negs] / temperature
        zmax = z.max()
        e = np.exp(z - zmax)
        total = e.sum()
        loss += (zmax + math.log(total)) - s[i, i] / temperature
        grad[i, i] -= 1.0 / (b * temperature)
        np.add.at(grad, (i, negs), (e / total) / (b * temperature))

        negs = list(sel.image_to_text[i])
        z = s[negs, i] / temperature
        zmax = z.max()
        e = np.exp(z - zmax)
        total = e.sum()
        loss += (zmax + math.log(total)) - s[i, i] / temperature
        grad[i, i] -= 1.0 / (b * temperature)
        np.add.at(grad, (negs, i), (e / total) / (b * temperature))
    return float(loss / b), grad


def adopt_loss(s: Array, temperature: float) -> tuple[float, BatchMaturity, Array]:
    """Adaptive contrastive objective: derive K from the batch, then contrast
    each positive against its K hardest negatives.

    The maturity statistics are computed once per batch from the similarity
    values themselves and carry no gradient. The contrastive term is the
    negatives-only ratio: in matched-seed comparisons the saturating form
    loses its early-convergence advantage over the hard triplet loss, while
    this form keeps it.
    """
    s = _square(s, "similarity matrix")
    if s.shape[0] < 2:
        raise ValueError("adopt_loss needs a batch of at least 2")
    gamma_a = clamp01(alignment(s))
    gamma_u = clamp01(uniformity(s))
    k = adaptive_k(gamma_a, gamma_u, s.shape[0])
    sel = select_negatives(s, k)
    loss, grad = negatives_only_info_nce(s, sel, temperature)
    return loss, BatchMaturity(gamma_a, gamma_u, k), grad
