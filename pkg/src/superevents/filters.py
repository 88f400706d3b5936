"""Temporal structure filters: banks of normalized Cauchy distributions over frames.

A filter is a T x N matrix whose columns are discrete Cauchy densities,
each with a learnable center and width held in unconstrained form:

    center_hat = (T - 1) * (tanh(center) + 1) / 2          in [0, T-1]
    scale_hat  = exp(1 - 2 * |tanh(width)|)                in (1/e, e]
    g[t]       = 1 / (pi * scale_hat * (1 + ((t - center_hat) / scale_hat)^2))
    values[t]  = g[t] / sum_s g[s]

so every column is strictly positive and sums to one regardless of the raw
parameter values, and center positions rescale proportionally with T.
Frames are 0-based, t in {0, ..., T-1}.

All functions are pure and dtype-preserving (feed float64/longdouble arrays
to get that precision back), so they are safe to call concurrently.
`filter_backward` supplies the exact parameter gradients, including the
dependence of the per-column normalizer on both parameters; at width = 0,
where |tanh| has a kink, the subgradient 0 is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FilterParams",
    "FilterBank",
    "MaterializedFilter",
    "materialize_filter",
    "filter_backward",
    "materialize_stack",
    "stack_backward",
    "init_filter_params",
]


@dataclass
class FilterParams:
    """Unconstrained parameters of one filter: N centers and N widths."""

    centers: np.ndarray  # shape (N,)
    widths: np.ndarray  # shape (N,)

    def __post_init__(self):
        self.centers = np.atleast_1d(np.asarray(self.centers))
        self.widths = np.atleast_1d(np.asarray(self.widths))
        if self.centers.shape != self.widths.shape or self.centers.ndim != 1:
            raise ValueError("centers and widths must be 1-D and the same length")

    @property
    def num_distributions(self) -> int:
        return self.centers.shape[0]


@dataclass
class FilterBank:
    """M filters of N distributions each, stored as (M, N) parameter arrays."""

    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers))
        self.widths = np.atleast_2d(np.asarray(self.widths))
        if self.centers.shape != self.widths.shape:
            raise ValueError("centers and widths must share a shape")

    @property
    def num_filters(self) -> int:
        return self.centers.shape[0]

    @property
    def num_distributions(self) -> int:
        return self.centers.shape[1]

    def filter(self, m: int) -> FilterParams:
        return FilterParams(self.centers[m], self.widths[m])


@dataclass
class MaterializedFilter:
    """One filter evaluated at a concrete sequence length T."""

    values: np.ndarray  # (T, N), columns sum to 1
    frame_centers: np.ndarray  # (N,), in frame units on [0, T-1]
    scales: np.ndarray  # (N,), dimensionless, in (1/e, e]
    norms: np.ndarray  # (N,), per-column normalization constants

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_distributions(self) -> int:
        return self.values.shape[1]


def _check_params(centers, widths):
    if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(widths))):
        raise ValueError("filter parameters must be finite")


def _transform(centers, widths, T):
    # raw -> frame-unit centers and bounded scales
    one = centers.dtype.type(1)
    frame_centers = (T - 1) * (np.tanh(centers) + one) / 2
    scales = np.exp(one - 2 * np.abs(np.tanh(widths)))
    return frame_centers, scales


def _density(frame_centers, scales, T):
    # unnormalized Cauchy columns g and offsets u, shapes (..., T, N)
    t = np.arange(T, dtype=frame_centers.dtype)
    u = (t[:, None] - frame_centers[..., None, :]) / scales[..., None, :]
    g = 1.0 / (math.pi * scales[..., None, :] * (1 + u * u))
    return g, u


def materialize_stack(centers: np.ndarray, widths: np.ndarray, T: int):
    """Evaluate filters with leading batch shape; returns values (..., T, N)
    plus frame_centers, scales, norms each (..., N)."""
    centers = np.asarray(centers)
    widths = np.asarray(widths)
    if T < 1:
        raise ValueError("sequence length T must be >= 1")
    _check_params(centers, widths)
    frame_centers, scales = _transform(centers, widths, T)
    g, _ = _density(frame_centers, scales, T)
    norms = g.sum(axis=-2)
    values = g / norms[..., None, :]
    return values, frame_centers, scales, norms


def materialize_filter(params: FilterParams, T: int) -> MaterializedFilter:
    """Build the T x N filter matrix for one set of parameters."""
    values, frame_centers, scales, norms = materialize_stack(
        params.centers, params.widths, T
    )
    return MaterializedFilter(values, frame_centers, scales, norms)


def stack_backward(centers: np.ndarray, widths: np.ndarray, T: int, upstream: np.ndarray):
    """Gradients of sum(upstream * values) wrt raw centers/widths.

    `upstream` has shape (..., T, N) matching materialize_stack output;
    returns (dcenters, dwidths) with the parameter shapes.
    """
    centers = np.asarray(centers)
    widths = np.asarray(widths)
    upstream = np.asarray(upstream, dtype=centers.dtype)
    if T < 1:
        raise ValueError("sequence length T must be >= 1")
    _check_params(centers, widths)
    if upstream.shape != centers.shape[:-1] + (T, centers.shape[-1]):
        raise ValueError(
            f"upstream shape {upstream.shape} does not match parameters "
            f"{centers.shape} at T={T}"
        )

    frame_centers, scales = _transform(centers, widths, T)
    g, u = _density(frame_centers, scales, T)
    norms = g.sum(axis=-2, keepdims=True)
    values = g / norms

    # d(sum U*F)/dg_t: normalization couples every row of a column
    dLdg = (upstream - (upstream * values).sum(axis=-2, keepdims=True)) / norms

    s = scales[..., None, :]
    denom = s * (1 + u * u)
    dg_dcenter_hat = g * 2 * u / denom
    dg_dscale_hat = g * (u * u - 1) / denom

    dcenter_hat = (dLdg * dg_dcenter_hat).sum(axis=-2)
    dscale_hat = (dLdg * dg_dscale_hat).sum(axis=-2)

    one = centers.dtype.type(1)
    th_c = np.tanh(centers)
    th_w = np.tanh(widths)
    dcenters = dcenter_hat * (T - 1) / 2 * (one - th_c * th_c)
    # sign() yields 0 at width = 0: the chosen subgradient of |tanh|
    dwidths = dscale_hat * scales * (-2) * np.sign(th_w) * (one - th_w * th_w)
    return dcenters, dwidths


def filter_backward(params: FilterParams, T: int, upstream: np.ndarray) -> FilterParams:
    """Parameter gradients for one filter; returns them in a FilterParams carrier."""
    dc, dw = stack_backward(params.centers, params.widths, T, upstream)
    return FilterParams(dc, dw)


def init_filter_params(rng: np.random.Generator, num_distributions: int,
                       dtype=np.float32) -> FilterParams:
    """Fresh parameters, centers and widths ~ Uniform(-0.5, 0.5)."""
    c = rng.uniform(-0.5, 0.5, size=num_distributions).astype(dtype)
    w = rng.uniform(-0.5, 0.5, size=num_distributions).astype(dtype)
    return FilterParams(c, w)
