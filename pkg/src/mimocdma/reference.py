"""Independent reference solutions used as numerical cross-checks.

Everything here deliberately avoids the production fixed-point solver:
only scalar bisection plus closed-form Gaussian-input expressions, so the
two code paths share no machinery beyond elementary arithmetic.  The
Rayleigh-limit chain (rich scattering, gamma -> 0) additionally accepts
arbitrary constellation kernels and is the reference for the continuity
checks at small gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG2E = math.log2(math.e)


@dataclass(frozen=True)
class GaussianClass:
    """One user population for the closed-form Gaussian chain."""

    weight: float
    mu: float
    gamma: float
    power: float
    gain_sq: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    gain_w: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    @property
    def rho(self) -> float:
        return self.mu / self.gamma


def _bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    flo = f(lo)
    fhi = f(hi)
    if flo > 0 or fhi < 0:
        raise RuntimeError(f"bisection bracket invalid: f({lo})={flo}, f({hi})={fhi}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _kl_bits(s0: float, s1: float) -> float:
    u = (s1 - s0) / s0
    return (math.log1p(u) - u / (1.0 + u)) * LOG2E


# ---------------------------------------------------------------------------
# Gaussian inputs: the whole hierarchy is closed-form algebra.


def _gauss_eps(power: float, xi2: float) -> float:
    return power * xi2 / (power + xi2)


def _gauss_xi2(zeta2: float, cls: GaussianClass) -> float:
    """Noise level of the per-symbol subchannel, by bisection on the
    harmonic-mean relation with the Gaussian MMSE closed form inside."""
    a, w = cls.gain_sq, cls.gain_w

    def implied(x: float) -> float:
        eps = _gauss_eps(cls.power, x)
        return 1.0 / float(np.sum(w * a / (zeta2 + cls.gamma * eps * a)))

    # Brackets: at eps = 0 the relation gives zeta2/E[a]; at eps = P it gives
    # the largest value the right-hand side can take.
    lo = zeta2 / float(np.sum(w * a)) * (1.0 - 1e-12)
    hi = 1.0 / float(np.sum(w * a / (zeta2 + cls.gamma * cls.power * a))) * (1.0 + 1e-12)
    return _bisect(lambda x: x - implied(x), lo, hi)


def _gauss_interference(zeta2: float, cls: GaussianClass) -> float:
    """rho * eps_mimo2, in the cancellation-free product form."""
    eps = _gauss_eps(cls.power, _gauss_xi2(zeta2, cls))
    a, w = cls.gain_sq, cls.gain_w
    g = cls.gamma * eps * a
    return cls.mu * float(np.sum(w * eps * a * zeta2 / (zeta2 + g)))


def _gauss_zeta2(r: float, cls: GaussianClass) -> float:
    hi = r + cls.mu * cls.power * float(cls.gain_sq.max()) + 1e-30
    return _bisect(lambda z: z - r - _gauss_interference(z, cls), r, hi * (1 + 1e-9))


def _gauss_eps_user(r: float, cls: GaussianClass) -> float:
    zeta2 = _gauss_zeta2(r, cls)
    m = zeta2 - r
    return r * m / (r + m)


def gaussian_fixed_points(beta: float, sigma2: float,
                          classes: list[GaussianClass],
                          scan: int = 400) -> list[float]:
    """All roots of the chip-level balance r = sigma2 + beta E[eps_user],
    found by a sign-change scan plus bisection."""
    cap = sigma2 + beta * sum(c.weight * c.mu * c.power * float(c.gain_sq.max())
                              for c in classes)

    def f(r: float) -> float:
        return r - sigma2 - beta * sum(c.weight * _gauss_eps_user(r, c)
                                       for c in classes)

    lo, hi = sigma2, cap * (1.0 + 1e-9)
    grid = np.linspace(lo, hi, scan)
    vals = np.array([f(r) for r in grid])
    roots: list[float] = []
    for i in range(scan - 1):
        if vals[i] == 0.0:
            roots.append(float(grid[i]))
        elif vals[i] < 0 < vals[i + 1]:
            roots.append(_bisect(f, float(grid[i]), float(grid[i + 1])))
        elif vals[i] > 0 > vals[i + 1]:
            roots.append(_bisect(lambda r: -f(r), float(grid[i]), float(grid[i + 1])))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    if not roots:
        roots.append(_bisect(f, lo, hi))
    return roots


def gaussian_se(beta: float, sigma2: float, classes: list[GaussianClass],
                r: float) -> tuple[float, float]:
    """(se_total, se_mmse_detector) in bits/chip/antenna at the given root."""
    mu_bar = sum(c.weight * c.mu for c in classes)
    total = _kl_bits(sigma2, r) / mu_bar
    mmse_det = 0.0
    for c in classes:
        zeta2 = _gauss_zeta2(r, c)
        xi2 = _gauss_xi2(zeta2, c)
        eps = _gauss_eps(c.power, xi2)
        c_awgn = math.log2(1.0 + c.power / xi2)
        scatter = float(np.sum(c.gain_w * [
            _kl_bits(zeta2, zeta2 + c.gamma * eps * a) for a in c.gain_sq
        ])) / c.gamma
        mimo = _kl_bits(r, zeta2) / c.mu
        share = c.weight * beta * c.mu / mu_bar
        total += share * (c_awgn + scatter + mimo)
        mmse_det += share * c_awgn
    return total, mmse_det


def solve_gaussian(beta: float, sigma2: float,
                   classes: list[GaussianClass]) -> dict:
    """Minimum-SE root of the Gaussian chain with its SE decomposition."""
    roots = gaussian_fixed_points(beta, sigma2, classes)
    best = None
    for r in roots:
        se, mmse_det = gaussian_se(beta, sigma2, classes, r)
        if best is None or (se, -r) < (best["se_total"], -best["r"]):
            best = {"r": r, "se_total": se, "se_mmse_detector": mmse_det,
                    "n_roots": len(roots)}
    return best


# ---------------------------------------------------------------------------
# Rayleigh limit (rich scattering): per-symbol noise equals the antenna-level
# noise and the scatterer correction vanishes.  Works for any constellation
# through the supplied kernels.


@dataclass(frozen=True)
class RayleighClass:
    weight: float
    mu: float
    constellation: object  # mimocdma Constellation


def _rayleigh_zeta2(r: float, cls: RayleighClass, kernels) -> float:
    P = cls.constellation.power
    hi = (r + cls.mu * P) * (1.0 + 1e-9)
    f = lambda z: z - r - cls.mu * kernels.mmse(cls.constellation, z)
    # Guard against multiple antenna-level solutions: scan before bisecting.
    grid = np.linspace(r, hi, 80)
    vals = [f(z) for z in grid]
    crossings = sum(1 for i in range(79) if vals[i] <= 0 < vals[i + 1])
    if crossings > 1:
        raise RuntimeError("multiple antenna-level solutions in Rayleigh chain")
    return _bisect(f, r, hi)


def solve_rayleigh(beta: float, sigma2: float, classes: list[RayleighClass],
                   kernels, scan: int = 200) -> dict:
    """Fixed point and SE of the rich-scattering chain, min-SE root."""
    cap = sigma2 + beta * sum(c.weight * c.mu * c.constellation.power
                              for c in classes)

    def eps_user(r: float, c: RayleighClass) -> float:
        zeta2 = _rayleigh_zeta2(r, c, kernels)
        m = zeta2 - r
        return r * m / (r + m) if m > 0 else 0.0

    def f(r: float) -> float:
        return r - sigma2 - beta * sum(c.weight * eps_user(r, c) for c in classes)

    lo, hi = sigma2, cap * (1.0 + 1e-9)
    grid = np.linspace(lo, hi, scan)
    vals = np.array([f(r) for r in grid])
    roots = []
    for i in range(scan - 1):
        if vals[i] < 0 < vals[i + 1]:
            roots.append(_bisect(f, float(grid[i]), float(grid[i + 1])))
        elif vals[i] > 0 > vals[i + 1]:
            roots.append(_bisect(lambda r: -f(r), float(grid[i]), float(grid[i + 1])))
    if not roots:
        roots.append(_bisect(f, lo, hi))

    mu_bar = sum(c.weight * c.mu for c in classes)
    best = None
    for r in roots:
        total = _kl_bits(sigma2, r) / mu_bar
        mmse_det = 0.0
        for c in classes:
            zeta2 = _rayleigh_zeta2(r, c, kernels)
            c_awgn = kernels.mutual_info(c.constellation, zeta2)
            share = c.weight * beta * c.mu / mu_bar
            total += share * (c_awgn + _kl_bits(r, zeta2) / c.mu)
            mmse_det += share * c_awgn
        if best is None or (total, -r) < (best["se_total"], -best["r"]):
            best = {"r": r, "se_total": total, "se_mmse_detector": mmse_det,
                    "n_roots": len(roots)}
    return best
