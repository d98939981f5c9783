"""MMSE and mutual information of the scalar complex Gaussian channel y = x + n.

Discrete alphabets are integrated with tensor Gauss-Hermite quadrature;
the Gaussian input kind uses exact closed forms.  Square QAM alphabets are
evaluated per real dimension (two independent PAM subchannels at half the
power and half the noise), which is both cheaper and better conditioned;
the generic two-dimensional path is kept as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constellation import Constellation

LN2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Gauss-Hermite nodes and weights in the standard-normal convention.

    ``sum(weights) == 1`` and ``sum(weights * nodes**2) == 1``, so an
    expectation over N(0, 1) is ``sum(weights * f(nodes))``.
    """

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, order: int = 50) -> "QuadratureGrid":
        if order < 1:
            raise ValueError("quadrature order must be >= 1")
        t, w = np.polynomial.hermite.hermgauss(order)
        nodes = math.sqrt(2.0) * t
        weights = w / w.sum()
        nodes.setflags(write=False)
        weights.setflags(write=False)
        return cls(order=order, nodes=nodes, weights=weights)


@lru_cache(maxsize=8)
def default_grid(order: int = 50) -> QuadratureGrid:
    return QuadratureGrid.build(order)


@dataclass(frozen=True)
class ScalarChannelResult:
    noise_var: float
    mmse: float
    rate_bits: float


def _check_noise(noise_var: float) -> float:
    noise_var = float(noise_var)
    if math.isnan(noise_var) or noise_var <= 0:
        raise ValueError(f"noise variance must be positive, got {noise_var}")
    return noise_var


def posterior_mean(c: Constellation, y: complex, noise_var: float) -> complex:
    """Conditional mean E[x | y] for y = x + n, n ~ CN(0, noise_var)."""
    noise_var = _check_noise(noise_var)
    if c.is_gaussian:
        if math.isinf(noise_var):
            return 0j
        return c.power / (c.power + noise_var) * complex(y)
    if math.isinf(noise_var):
        return c.mean()
    logw = np.log(c.probs) - np.abs(y - c.points) ** 2 / noise_var
    logw -= logw.max()
    w = np.exp(logw)
    return complex(np.sum(w * c.points) / w.sum())


def _log1p_sumexp(alpha: np.ndarray) -> np.ndarray:
    """log(1 + sum_j exp(alpha[i, j])) for a 2-D ``alpha``, row by row.

    Rows whose terms are all <= 1 go through log1p so the result keeps the
    relative accuracy of the tiny sum (rate-saturation regime); the rest use
    a shifted logsumexp that includes the implicit unit term.
    """
    m = alpha.max(axis=-1)
    small = m <= 0
    out = np.empty_like(m)
    if np.any(small):
        out[small] = np.log1p(np.exp(alpha[small]).sum(axis=-1))
    if not np.all(small):
        big = ~small
        mm = m[big]
        out[big] = mm + np.log(np.exp(-mm) + np.exp(alpha[big] - mm[:, None]).sum(axis=-1))
    return out


def _pam_mmse(levels: np.ndarray, probs: np.ndarray, s2: float,
              grid: QuadratureGrid) -> float:
    """MMSE of a real PAM alphabet in real noise of variance s2."""
    s = math.sqrt(s2)
    y = levels[:, None] + s * grid.nodes[None, :]          # (m, n)
    logw = np.log(probs)[None, None, :] - (y[..., None] - levels) ** 2 / (2.0 * s2)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    pm = (w @ levels) / w.sum(axis=-1)
    err = (levels[:, None] - pm) ** 2
    return float(np.sum(probs[:, None] * grid.weights[None, :] * err))


def _pam_mutual_info(levels: np.ndarray, probs: np.ndarray, s2: float,
                     grid: QuadratureGrid) -> float:
    """Mutual information (bits) of a real PAM alphabet in noise variance s2.

    Computed in deficit form H(X) - E[log(1 + R)]/ln 2 so that the result
    stays accurate when the rate saturates at the alphabet entropy.
    """
    n = math.sqrt(s2) * grid.nodes
    h_bits = float(-np.sum(probs * np.log2(probs)))
    deficit = 0.0
    m = levels.size
    for k in range(m):
        d = levels[k] - np.delete(levels, k)                # (m-1,)
        logpr = np.log(np.delete(probs, k) / probs[k])
        theta = -(2.0 * n[:, None] * d + d**2) / (2.0 * s2)
        deficit += probs[k] * float(np.sum(grid.weights * _log1p_sumexp(logpr + theta)))
    return h_bits - deficit / LN2


def _complex_noise_grid(noise_var: float, grid: QuadratureGrid):
    s = math.sqrt(noise_var / 2.0)
    n = s * (grid.nodes[:, None] + 1j * grid.nodes[None, :])
    w2 = grid.weights[:, None] * grid.weights[None, :]
    return n.ravel(), w2.ravel()


def _full_mmse(c: Constellation, noise_var: float, grid: QuadratureGrid) -> float:
    n, w2 = _complex_noise_grid(noise_var, grid)
    total = 0.0
    logp = np.log(c.probs)
    for k in range(c.size):
        y = c.points[k] + n
        logw = logp[None, :] - np.abs(y[:, None] - c.points[None, :]) ** 2 / noise_var
        logw -= logw.max(axis=-1, keepdims=True)
        w = np.exp(logw)
        pm = (w @ c.points) / w.sum(axis=-1)
        total += c.probs[k] * float(np.sum(w2 * np.abs(c.points[k] - pm) ** 2))
    return total


def _full_mutual_info(c: Constellation, noise_var: float, grid: QuadratureGrid) -> float:
    n, w2 = _complex_noise_grid(noise_var, grid)
    h_bits = c.entropy_bits()
    deficit = 0.0
    for k in range(c.size):
        d = c.points[k] - np.delete(c.points, k)            # (q-1,)
        logpr = np.log(np.delete(c.probs, k) / c.probs[k])
        theta = -(2.0 * np.real(np.conj(n)[:, None] * d) + np.abs(d) ** 2) / noise_var
        deficit += c.probs[k] * float(np.sum(w2 * _log1p_sumexp(logpr + theta)))
    return h_bits - deficit / LN2


def _resolve(grid: QuadratureGrid | None) -> QuadratureGrid:
    return grid if grid is not None else default_grid()


def mmse(c: Constellation, noise_var: float, grid: QuadratureGrid | None = None,
         method: str = "auto") -> float:
    """E|x - E[x|y]|^2 for y = x + n, n ~ CN(0, noise_var)."""
    noise_var = _check_noise(noise_var)
    if c.is_gaussian:
        if math.isinf(noise_var):
            return c.power
        return c.power * noise_var / (c.power + noise_var)
    if math.isinf(noise_var):
        return float(np.sum(c.probs * np.abs(c.points - c.mean()) ** 2))
    grid = _resolve(grid)
    if method == "auto":
        method = "iq" if c.pam_levels is not None else "full"
    if method == "iq":
        if c.pam_levels is None:
            raise ValueError("constellation does not factor into I/Q")
        m = c.pam_levels.size
        probs = np.full(m, 1.0 / m)
        return 2.0 * _pam_mmse(c.pam_levels, probs, noise_var / 2.0, grid)
    if method == "full":
        return _full_mmse(c, noise_var, grid)
    raise ValueError(f"unknown method {method!r}")


def mutual_info(c: Constellation, noise_var: float, grid: QuadratureGrid | None = None,
                method: str = "auto") -> float:
    """I(x; x + n) in bits, n ~ CN(0, noise_var)."""
    noise_var = _check_noise(noise_var)
    if c.is_gaussian:
        if math.isinf(noise_var):
            return 0.0
        return math.log2(1.0 + c.power / noise_var)
    if math.isinf(noise_var):
        return 0.0
    grid = _resolve(grid)
    if method == "auto":
        method = "iq" if c.pam_levels is not None else "full"
    if method == "iq":
        if c.pam_levels is None:
            raise ValueError("constellation does not factor into I/Q")
        m = c.pam_levels.size
        probs = np.full(m, 1.0 / m)
        return 2.0 * _pam_mutual_info(c.pam_levels, probs, noise_var / 2.0, grid)
    if method == "full":
        return _full_mutual_info(c, noise_var, grid)
    raise ValueError(f"unknown method {method!r}")


def evaluate(c: Constellation, noise_var: float,
             grid: QuadratureGrid | None = None) -> ScalarChannelResult:
    return ScalarChannelResult(
        noise_var=float(noise_var),
        mmse=mmse(c, noise_var, grid),
        rate_bits=mutual_info(c, noise_var, grid),
    )


class ScalarKernels:
    """Bundles a quadrature grid with the channel kernels.

    Instances are immutable and safe to share across threads; the fixed
    point solvers take one of these so every level integrates on the same
    grid.
    """

    def __init__(self, grid: QuadratureGrid | int = 50):
        self.grid = grid if isinstance(grid, QuadratureGrid) else default_grid(grid)

    def mmse(self, c: Constellation, noise_var: float) -> float:
        return mmse(c, noise_var, self.grid)

    def mutual_info(self, c: Constellation, noise_var: float) -> float:
        return mutual_info(c, noise_var, self.grid)

    def posterior_mean(self, c: Constellation, y: complex, noise_var: float) -> complex:
        return posterior_mean(c, y, noise_var)

    def evaluate(self, c: Constellation, noise_var: float) -> ScalarChannelResult:
        return evaluate(c, noise_var, self.grid)
