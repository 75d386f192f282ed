"""Poincare-ball geometry for aligning face and voice embeddings.

All maps run through the autodiff engine, so distances taken on lifted
points are differentiable back to the Euclidean projections. Points live
strictly inside the ball: sqrt(c) * ||x|| <= 1 - boundary_eps.

Conventions (curvature -c, c > 0):

    exp_0(v)  = tanh(sqrt(c) ||v||) * v / (sqrt(c) ||v||)
    log_0(p)  = artanh(sqrt(c) ||p||) * p / (sqrt(c) ||p||)
    x (+) y   = ((1 + 2c<x,y> + c||y||^2) x + (1 - c||x||^2) y)
                / (1 + 2c<x,y> + c^2 ||x||^2 ||y||^2)
    d(x, y)   = (2 / sqrt(c)) * artanh(sqrt(c) ||(-x) (+) y||)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError

# Below this norm the exp/log maps switch to their linear limit.
_TINY = 1e-12


@dataclass(frozen=True)
class BallConfig:
    """Curvature and numerical boundary of the Poincare ball."""

    curvature: float = 1.0
    boundary_eps: float = 1e-5

    def __post_init__(self):
        if not self.curvature > 0.0:
            raise ContractError(f"curvature must be positive, got {self.curvature}")
        if not 0.0 < self.boundary_eps < 1.0:
            raise ContractError(f"boundary_eps must lie in (0, 1), got {self.boundary_eps}")

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.curvature)

    @property
    def max_norm(self) -> float:
        """Largest admissible Euclidean norm of a ball point."""
        return (1.0 - self.boundary_eps) / self.sqrt_c


@dataclass
class PoincarePoint:
    """One point (vector of shape [D]) or a batch of points ([B x D]) on the ball."""

    vector: Tensor
    config: BallConfig

    def __post_init__(self):
        if self.vector.ndim not in (1, 2):
            raise ContractError(f"PoincarePoint needs [D] or [B x D], got shape {self.vector.shape}")

    def numpy(self) -> np.ndarray:
        return self.vector.numpy()


def _same_config(x: PoincarePoint, y: PoincarePoint) -> BallConfig:
    if x.config != y.config:
        raise ContractError(f"ball configs differ: {x.config} vs {y.config}")
    return x.config


def _as_rows(v: Tensor) -> tuple[Tensor, bool]:
    """Promote [D] to [1 x D]; report whether promotion happened."""
    if v.ndim == 1:
        return v.reshape(1, v.shape[0]), True
    if v.ndim == 2:
        return v, False
    raise ContractError(f"expected [D] or [B x D], got shape {v.shape}")


def _restore(rows: Tensor, was_vector: bool) -> Tensor:
    return rows.reshape(rows.shape[1]) if was_vector else rows


def _row_norms(rows: Tensor) -> Tensor:
    return rows.norm2(axis=1, keepdims=True)


def clip_norm(v: Tensor, max_norm: float) -> Tensor:
    """Rescale rows with Euclidean norm above ``max_norm`` back onto that radius.

    Applied to tangent vectors before the exp map, this bounds the lifted
    radius at tanh(sqrt(c) * max_norm) and keeps the contrastive geometry
    away from the rim, where distances degenerate and gradients explode.
    """
    if not max_norm > 0.0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    rows, was_vector = _as_rows(v)
    n = _row_norms(rows)
    factor = ad.clamp_max(max_norm / ad.clamp_min(n, _TINY), 1.0)
    out = rows * ad.tile_cols(factor, rows.shape[1])
    return _restore(out, was_vector)


def project_to_ball(v: Tensor, cfg: BallConfig) -> PoincarePoint:
    """Rescale any row with sqrt(c)||v|| > 1 - eps back onto the admissible ball.

    Rows already inside pass through unchanged (identity gradient).
    """
    if not np.all(np.isfinite(v.data)):
        raise NumericError("project_to_ball: input contains non-finite values")
    rows, was_vector = _as_rows(v)
    n = _row_norms(rows)
    # factor = min(max_norm / ||v||, 1); the clamp keeps the inside branch exact.
    factor = ad.clamp_max(cfg.max_norm / ad.clamp_min(n, _TINY), 1.0)
    out = rows * ad.tile_cols(factor, rows.shape[1])
    return PoincarePoint(_restore(out, was_vector), cfg)


def exp_map_origin(v: Tensor, cfg: BallConfig) -> PoincarePoint:
    """Lift a tangent vector at the origin onto the ball.

    The ratio tanh(sqrt(c)||v||) / (sqrt(c)||v||) tends to 1 as v -> 0; the
    clamp below realises that limit without a branch.
    """
    if not np.all(np.isfinite(v.data)):
        raise NumericError("exp_map_origin: input contains non-finite values")
    rows, was_vector = _as_rows(v)
    sn = ad.clamp_min(_row_norms(rows) * cfg.sqrt_c, _TINY)
    factor = ad.tanh(sn) / sn
    out = rows * ad.tile_cols(factor, rows.shape[1])
    return project_to_ball(_restore(out, was_vector), cfg)


def log_map_origin(p: PoincarePoint) -> Tensor:
    """Inverse of :func:`exp_map_origin`; maps ball points back to the tangent space."""
    cfg = p.config
    rows, was_vector = _as_rows(p.vector)
    sn = _row_norms(rows) * cfg.sqrt_c
    if np.any(sn.data >= 1.0):
        raise NumericError("log_map_origin: point on or outside the unit ball")
    safe = ad.clamp_min(sn, _TINY)
    factor = ad.artanh(ad.clamp_max(safe, 1.0 - cfg.boundary_eps)) / safe
    out = rows * ad.tile_cols(factor, rows.shape[1])
    return _restore(out, was_vector)


def mobius_add(x: PoincarePoint, y: PoincarePoint) -> PoincarePoint:
    """Mobius addition x (+) y, re-projected onto the admissible ball."""
    cfg = _same_config(x, y)
    xr, x_was_vec = _as_rows(x.vector)
    yr, y_was_vec = _as_rows(y.vector)
    if xr.shape != yr.shape:
        raise ContractError(f"mobius_add: point shapes differ: {x.vector.shape} vs {y.vector.shape}")
    c = cfg.curvature
    d = xr.shape[1]

    xy = (xr * yr).sum(axis=1, keepdims=True)
    x2 = (xr * xr).sum(axis=1, keepdims=True)
    y2 = (yr * yr).sum(axis=1, keepdims=True)

    coef_x = xy * (2.0 * c) + y2 * c + 1.0
    coef_y = 1.0 - x2 * c
    denom = ad.clamp_min(xy * (2.0 * c) + x2 * y2 * (c * c) + 1.0, _TINY)

    out = (xr * ad.tile_cols(coef_x, d) + yr * ad.tile_cols(coef_y, d)) / ad.tile_cols(denom, d)
    return project_to_ball(_restore(out, x_was_vec and y_was_vec), cfg)


def poincare_distance(x: PoincarePoint, y: PoincarePoint) -> Tensor:
    """Geodesic distance d(x, y) = (2/sqrt(c)) artanh(sqrt(c) ||(-x) (+) y||).

    The Mobius norm is evaluated through the equivalent closed form

        ||(-x) (+) y||^2 = ||x - y||^2 / (1 - 2c<x,y> + c^2 ||x||^2 ||y||^2),

    whose floating-point expression is exactly symmetric under swapping
    x and y; materialising (-x) (+) y would let artanh amplify rounding
    asymmetry near the boundary. Scalar for single points, [B] for rows.
    """
    cfg = _same_config(x, y)
    xr, x_was_vec = _as_rows(x.vector)
    yr, y_was_vec = _as_rows(y.vector)
    if xr.shape != yr.shape:
        raise ContractError(
            f"poincare_distance: point shapes differ: {x.vector.shape} vs {y.vector.shape}"
        )
    c = cfg.curvature
    xy = (xr * yr).sum(axis=1, keepdims=True)
    x2 = (xr * xr).sum(axis=1, keepdims=True)
    y2 = (yr * yr).sum(axis=1, keepdims=True)
    d2 = ((xr - yr) * (xr - yr)).sum(axis=1, keepdims=True)
    denom = ad.clamp_min(1.0 - xy * (2.0 * c) + x2 * y2 * (c * c), _TINY)
    sn = ad.clamp_max(ad.sqrt(d2 / denom) * cfg.sqrt_c, 1.0 - cfg.boundary_eps)
    d = ad.artanh(sn) * (2.0 / cfg.sqrt_c)
    return d.reshape(()) if (x_was_vec and y_was_vec) else d.reshape(xr.shape[0])


def pairwise_distances(x: PoincarePoint, y: PoincarePoint) -> Tensor:
    """All-pairs distance matrix D[i, j] = d(x_i, y_j) for two [B x D] batches."""
    cfg = _same_config(x, y)
    xr, _ = _as_rows(x.vector)
    yr, _ = _as_rows(y.vector)
    if xr.shape[1] != yr.shape[1]:
        raise ContractError(f"pairwise_distances: dims differ: {xr.shape} vs {yr.shape}")
    nx, ny = xr.shape[0], yr.shape[0]
    flat = poincare_distance(
        PoincarePoint(ad.repeat_rows(xr, ny), cfg),
        PoincarePoint(ad.tile_rows(yr, nx), cfg),
    )
    return flat.reshape(nx, ny)
