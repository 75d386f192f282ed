"""Training objectives: alignment, orthogonal projection, classification.

The total objective is the weighted sum

    L = alpha1 * L_align + alpha2 * L_op + alpha3 * L_ce

with the weights defaulting to (0.3, 0.35, 0.35).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import hyperbolic as hyp
from .autodiff import Tensor
from .errors import ContractError, NumericError
from .hyperbolic import PoincarePoint

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.3
    alpha2: float = 0.35
    alpha3: float = 0.35

    def __post_init__(self):
        values = (self.alpha1, self.alpha2, self.alpha3)
        if any(a < 0.0 for a in values):
            raise ContractError(f"loss weights must be nonnegative, got {values}")
        if not any(a > 0.0 for a in values):
            raise ContractError("at least one loss weight must be positive")


@dataclass
class LossBreakdown:
    """Scalar loss tensors for one step; ``total`` is the node to backpropagate."""

    l_align: Tensor
    l_op: Tensor
    l_ce: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "l_align": self.l_align.item(),
            "l_op": self.l_op.item(),
            "l_ce": self.l_ce.item(),
            "total": self.total.item(),
        }


def _normalize_rows(x: Tensor) -> Tensor:
    norms = ad.clamp_min(x.norm2(axis=1, keepdims=True), _NORM_FLOOR)
    return x / ad.tile_cols(norms, x.shape[1])


def pairwise_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity matrix between the rows of two [N x D] batches."""
    return ad.matmul(_normalize_rows(a), _normalize_rows(b).transpose())


def similarity_matrix(
    face: PoincarePoint | Tensor, voice: PoincarePoint | Tensor, mode: str
) -> Tensor:
    """S[i, j] = similarity of face i with voice j under the configured mode."""
    if mode == "neg_hyperbolic_distance":
        if not isinstance(face, PoincarePoint) or not isinstance(voice, PoincarePoint):
            raise ContractError("neg_hyperbolic_distance needs lifted (ball) embeddings")
        return -hyp.pairwise_distances(face, voice)
    if mode == "cosine":
        fv = face.vector if isinstance(face, PoincarePoint) else face
        vv = voice.vector if isinstance(voice, PoincarePoint) else voice
        return pairwise_cosine(fv, vv)
    raise ContractError(f"unknown similarity mode {mode!r}")


def alignment_loss(
    face: PoincarePoint | Tensor,
    voice: PoincarePoint | Tensor,
    logit_scale: Tensor,
    mode: str = "neg_hyperbolic_distance",
) -> Tensor:
    """Symmetric cross-entropy over in-batch pairs.

    Row i of both inputs must be the same identity's matched pair; every
    other row serves as a negative. Temperatured logits are
    exp(logit_scale) * similarity, and the loss averages the face->voice
    and voice->face directions.
    """
    sims = similarity_matrix(face, voice, mode)
    b = sims.shape[0]
    if b < 2:
        raise ContractError("alignment_loss needs a batch of at least 2 pairs")
    if sims.shape[0] != sims.shape[1]:
        raise ContractError(f"alignment_loss needs matched batches, got {sims.shape}")
    logits = sims * ad.exp(logit_scale)
    targets = np.arange(b)
    return (ad.log_softmax_nll(logits, targets) + ad.log_softmax_nll(logits.transpose(), targets)) * 0.5


def orthogonal_projection_loss(
    fused: Tensor, labels, inter_weight: float = 1.0
) -> Tensor:
    """Pull same-identity embeddings together, push different ones orthogonal.

    With s = mean cosine over same-label pairs and d = mean |cosine| over
    different-label pairs (self-pairs excluded):

        loss = (1 - s) + inter_weight * d

    Whichever term has no qualifying pairs in the batch is dropped.
    """
    y = np.asarray(labels)
    b = fused.shape[0]
    if b < 2:
        raise ContractError("orthogonal_projection_loss needs a batch of at least 2")
    if y.shape != (b,):
        raise ContractError(f"labels shape {y.shape} does not match batch {b}")

    gram = pairwise_cosine(fused, fused)
    same = (y[:, None] == y[None, :]) & ~np.eye(b, dtype=bool)
    diff = y[:, None] != y[None, :]

    terms: list[Tensor] = []
    if same.any():
        s_mean = (gram * Tensor(same.astype(np.float64))).sum() / float(same.sum())
        terms.append(1.0 - s_mean)
    if diff.any():
        d_mean = (ad.absolute(gram) * Tensor(diff.astype(np.float64))).sum() / float(diff.sum())
        terms.append(d_mean * inter_weight)

    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    return ad.log_softmax_nll(logits, labels)


def total_loss(l_align: Tensor, l_op: Tensor, l_ce: Tensor, weights: LossWeights) -> LossBreakdown:
    for name, t in (("l_align", l_align), ("l_op", l_op), ("l_ce", l_ce)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"total_loss: component {name} is non-finite")
    total = l_align * weights.alpha1 + l_op * weights.alpha2 + l_ce * weights.alpha3
    return LossBreakdown(l_align=l_align, l_op=l_op, l_ce=l_ce, total=total)
