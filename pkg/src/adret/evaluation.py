"""Retrieval metrics: Recall@K both ways, RSUM, and similarity ensembling.

Direction naming: caption retrieval takes captions as queries and ranks
images; image retrieval takes images as queries and ranks captions. A query
scores a hit at K when at least one of its relevant candidates appears in
the top K, with ranking ties broken toward the smaller candidate index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence, Set

import numpy as np

from .errors import DataError, DimensionError
from .tensor import Array, as_matrix, cosine_sim_matrix

RECALL_KS = (1, 5, 10)


@dataclass(frozen=True)
class EmbeddingSet:
    """Unit-normalized embeddings with their instance ids, row-aligned."""

    vectors: Array
    ids: tuple[str, ...]

    def __post_init__(self):
        v = as_matrix(self.vectors, "embeddings")
        object.__setattr__(self, "vectors", v)
        if len(self.ids) != v.shape[0]:
            raise DimensionError(f"{len(self.ids)} ids for {v.shape[0]} rows")


@dataclass(frozen=True)
class RetrievalResult:
    ir_r1: float
    ir_r5: float
    ir_r10: float
    cr_r1: float
    cr_r5: float
    cr_r10: float
    rsum: float

    def to_json(self) -> str:
        return json.dumps({k: float(v) for k, v in self.__dict__.items()},
                          sort_keys=True)

    def to_csv(self) -> str:
        header = "ir_r1,ir_r5,ir_r10,cr_r1,cr_r5,cr_r10,rsum"
        row = ",".join(repr(float(v)) for v in (
            self.ir_r1, self.ir_r5, self.ir_r10,
            self.cr_r1, self.cr_r5, self.cr_r10, self.rsum))
        return f"{header}\n{row}\n"


def recall_at_k(scores: Array, query_ids: Sequence[str],
                candidate_ids: Sequence[str],
                truth: Mapping[str, Set[str]], k: int) -> float:
    """Percent of queries with a relevant candidate in their top-K.

    ``scores[q, c]`` ranks candidate c for query q, higher is better; ties
    resolve toward the smaller candidate index.
    """
    scores = as_matrix(scores, "score matrix")
    if k < 1:
        raise ValueError(f"recall_at_k: k must be >= 1, got {k}")
    if scores.shape != (len(query_ids), len(candidate_ids)):
        raise DimensionError(f"score matrix {scores.shape} does not match "
                             f"{len(query_ids)} queries x {len(candidate_ids)} candidates")
    column_of = {cid: j for j, cid in enumerate(candidate_ids)}
    hits = 0
    for q, qid in enumerate(query_ids):
        if qid not in truth:
            raise DataError(f"query {qid!r} missing from ground truth")
        relevant = {column_of[cid] for cid in truth[qid] if cid in column_of}
        if not relevant:
            raise DataError(f"query {qid!r} has no relevant candidate in the index")
        top = np.argsort(-scores[q], kind="stable")[:k]
        if any(int(j) in relevant for j in top):
            hits += 1
    return 100.0 * hits / len(query_ids)


def evaluate_scores(scores: Array, text_ids: Sequence[str],
                    image_ids: Sequence[str],
                    truth: Mapping[str, Set[str]]) -> RetrievalResult:
    """Both directions' R@{1,5,10} from a text-by-image score matrix."""
    scores = as_matrix(scores, "score matrix")
    cr = [recall_at_k(scores, text_ids, image_ids, truth, k) for k in RECALL_KS]
    ir = [recall_at_k(scores.T, image_ids, text_ids, truth, k) for k in RECALL_KS]
    return RetrievalResult(ir_r1=ir[0], ir_r5=ir[1], ir_r10=ir[2],
                           cr_r1=cr[0], cr_r5=cr[1], cr_r10=cr[2],
                           rsum=float(sum(ir) + sum(cr)))


def evaluate(texts: EmbeddingSet, images: EmbeddingSet,
             truth: Mapping[str, Set[str]]) -> RetrievalResult:
    """Build the similarity table once and score both directions."""
    scores = cosine_sim_matrix(texts.vectors, images.vectors)
    return evaluate_scores(scores, texts.ids, images.ids, truth)


def evaluate_scores_folds(scores: Array, text_ids: Sequence[str],
                          image_ids: Sequence[str],
                          truth: Mapping[str, Set[str]],
                          folds: int) -> RetrievalResult:
    """Average metrics over contiguous image folds, each with its captions.

    folds=1 is plain evaluate_scores. The averaged result's RSUM is the sum
    of the six averaged metrics.
    """
    if folds < 1:
        raise ValueError(f"folds must be >= 1, got {folds}")
    if folds == 1:
        return evaluate_scores(scores, text_ids, image_ids, truth)
    scores = as_matrix(scores, "score matrix")
    text_row = {tid: i for i, tid in enumerate(text_ids)}
    parts = []
    for img_idx in np.array_split(np.arange(len(image_ids)), folds):
        fold_image_ids = [image_ids[i] for i in img_idx]
        caption_ids = [tid for iid in fold_image_ids for tid in sorted(truth[iid])]
        rows = [text_row[tid] for tid in caption_ids]
        sub = scores[np.ix_(rows, img_idx)]
        parts.append(evaluate_scores(sub, caption_ids, fold_image_ids, truth))
    mean = {name: float(np.mean([getattr(p, name) for p in parts]))
            for name in ("ir_r1", "ir_r5", "ir_r10", "cr_r1", "cr_r5", "cr_r10")}
    return RetrievalResult(rsum=float(sum(mean.values())), **mean)


def evaluate_folds(texts: EmbeddingSet, images: EmbeddingSet,
                   truth: Mapping[str, Set[str]], folds: int) -> RetrievalResult:
    scores = cosine_sim_matrix(texts.vectors, images.vectors)
    return evaluate_scores_folds(scores, texts.ids, images.ids, truth, folds)


def ensemble_similarity(matrices: Sequence[Array]) -> Array:
    """Element-wise mean of same-shaped similarity matrices."""
    if not matrices:
        raise ValueError("ensemble_similarity needs at least one matrix")
    mats = [as_matrix(m, f"similarity matrix {i}") for i, m in enumerate(matrices)]
    shape = mats[0].shape
    for i, m in enumerate(mats[1:], start=1):
        if m.shape != shape:
            raise DimensionError(f"matrix {i} has shape {m.shape}, expected {shape}")
    return np.mean(np.stack(mats), axis=0)
