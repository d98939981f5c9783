"""Coupled fixed points of the randomly spread multiuser MIMO channel.

Three levels, all reduced to scalars by the rotation-invariant channel
statistics (docs/isotropic_reduction.md spells out the reduction):

  chip level     r     = sigma2 + beta * E_classes[eps_user]
  antenna level  zeta2 = r + rho * eps_mimo2, with xi2 set by the scatterer
                 gain law
  symbol level   eps_awgn = mmse(constellation, xi2)

``solve`` runs a damped iteration of the full hierarchy from several
starting points, deduplicates the fixed points it finds, attaches the
spectral-efficiency decomposition to each, and orders them ascending by
spectral efficiency; entry 0 is the selected branch.  Coexisting branches
(and the hysteresis they produce under parameter continuation) are normal
in the highly loaded regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constellation import Constellation
from .scalar_channel import ScalarKernels

LOG2E = math.log2(math.e)

_ATOL = 1e-12


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, eq=False)
class ScatterGainLaw:
    """Distribution of squared scatterer gains as weighted atoms.

    Normalized so the mean squared gain is one; pass
    ``require_normalized=False`` to experiment with other laws (the
    asymptotic formulas assume unit mean).
    """

    gain_sq: np.ndarray
    weights: np.ndarray
    require_normalized: bool = True

    def __post_init__(self):
        a = np.asarray(self.gain_sq, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "gain_sq", a)
        object.__setattr__(self, "weights", w)
        if a.size == 0 or a.shape != w.shape:
            raise ValueError("gain atoms and weights must be nonempty and congruent")
        if np.any(a < 0) or np.any(w < 0):
            raise ValueError("gains and weights must be nonnegative")
        if abs(w.sum() - 1.0) > _ATOL:
            raise ValueError("atom weights must sum to one")
        if self.require_normalized and abs(float(np.sum(w * a)) - 1.0) > _ATOL:
            raise ValueError("mean squared gain must equal one")

    @classmethod
    def unit(cls) -> "ScatterGainLaw":
        return cls(np.array([1.0]), np.array([1.0]))

    @classmethod
    def from_atoms(cls, atoms, require_normalized: bool = True) -> "ScatterGainLaw":
        a = [g for g, _ in atoms]
        w = [p for _, p in atoms]
        return cls(np.array(a, float), np.array(w, float), require_normalized)

    def mean_gain(self) -> float:
        return float(np.sum(self.weights * self.gain_sq))

    def to_dict(self) -> dict:
        return {"atoms": [[float(g), float(p)]
                          for g, p in zip(self.gain_sq, self.weights)]}


@dataclass(frozen=True, eq=False)
class UserClass:
    """One homogeneous user population.

    mu = transmit antennas per receive antenna, rho = scatterers per receive
    antenna, gamma = transmit antennas per scatterer, so mu = rho * gamma.
    """

    weight: float
    mu: float
    gamma: float
    constellation: Constellation
    gains: ScatterGainLaw = field(default_factory=ScatterGainLaw.unit)
    rho: float | None = None

    def __post_init__(self):
        if self.rho is None:
            object.__setattr__(self, "rho", self.mu / self.gamma)
        if not (0 < self.weight <= 1):
            raise ValueError("class weight must lie in (0, 1]")
        if self.mu <= 0 or self.gamma <= 0 or self.rho <= 0:
            raise ValueError("antenna ratios must be positive")
        if abs(self.mu - self.rho * self.gamma) > _ATOL * max(1.0, self.mu):
            raise ValueError("mu must equal rho * gamma")

    def to_dict(self) -> dict:
        return {
            "weight": self.weight,
            "mu": self.mu,
            "gamma": self.gamma,
            "rho": self.rho,
            "constellation": self.constellation.to_dict(),
            "gains": self.gains.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class SystemParams:
    """Load beta = users per chip, AWGN variance sigma2, user classes.

    beta = 0 is accepted as the no-interference limit even though normal
    operating points have beta > 0.
    """

    beta: float
    sigma2: float
    classes: tuple[UserClass, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not (self.sigma2 > 0):
            raise ValueError("sigma2 must be positive")
        if not self.classes:
            raise ValueError("at least one user class required")
        total = sum(c.weight for c in self.classes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"class weights must sum to one, got {total}")

    @property
    def mu_bar(self) -> float:
        return sum(c.weight * c.mu for c in self.classes)

    def snr_db(self, class_idx: int = 0) -> float:
        return 10.0 * math.log10(self.classes[class_idx].constellation.power / self.sigma2)

    def interference_cap(self) -> float:
        """Upper bound on r: every symbol contributes its prior variance."""
        return self.sigma2 + self.beta * sum(
            c.weight * c.mu * c.constellation.power * c.gains.mean_gain()
            for c in self.classes)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "sigma2": self.sigma2,
            "classes": [c.to_dict() for c in self.classes],
        }


@dataclass(frozen=True)
class ClassState:
    zeta2: float
    xi2: float
    eps_awgn: float
    eps_mimo2: float
    eps_user: float


@dataclass(frozen=True)
class FixedPointState:
    """Converged scalars of the full hierarchy; r is the chip-level
    effective noise variance, per-class entries the inner quantities."""

    r: float
    classes: tuple[ClassState, ...]

    def residuals(self, params: SystemParams, kernels: ScalarKernels) -> dict[str, float]:
        """Relative residual of every update map re-evaluated at this state."""
        out: dict[str, float] = {}
        acc = 0.0
        for i, (cls, st) in enumerate(zip(params.classes, self.classes)):
            m = interference_term(st.zeta2, cls, st.eps_awgn)
            zeta2_new = self.r + m
            xi2_new = xi_update(st.zeta2, cls.gamma, cls.gains, st.eps_awgn)
            eps_new = kernels.mmse(cls.constellation, st.xi2)
            m2_new = eps_mimo2_eval(st.zeta2, cls.gamma, cls.gains, st.eps_awgn)
            eu_new = self.r * m / (self.r + m) if m > 0 else 0.0
            out[f"zeta2[{i}]"] = abs(zeta2_new - st.zeta2) / st.zeta2
            if math.isinf(st.xi2):
                out[f"xi2[{i}]"] = 0.0 if math.isinf(xi2_new) else math.inf
            else:
                out[f"xi2[{i}]"] = abs(xi2_new - st.xi2) / st.xi2
            scale = max(st.eps_awgn, 1e-12 * cls.constellation.power)
            out[f"eps_awgn[{i}]"] = abs(eps_new - st.eps_awgn) / scale
            scale = max(st.eps_mimo2, 1e-12 * st.zeta2)
            out[f"eps_mimo2[{i}]"] = abs(m2_new - st.eps_mimo2) / scale
            scale = max(st.eps_user, 1e-12 * self.r)
            out[f"eps_user[{i}]"] = abs(eu_new - st.eps_user) / scale
            acc += cls.weight * st.eps_user
        out["cdma"] = abs(self.r - params.sigma2 - params.beta * acc) / self.r
        return out

    def max_residual(self, params: SystemParams, kernels: ScalarKernels) -> float:
        return max(self.residuals(params, kernels).values())


@dataclass(frozen=True)
class ClassSETerms:
    c_awgn: float
    kl_scatter: float
    kl_mimo: float


@dataclass(frozen=True)
class SEReport:
    """Spectral efficiency decomposition, bits per chip per transmit antenna."""

    se_total: float
    se_mmse_detector: float
    per_class: tuple[ClassSETerms, ...]
    kl_cdma: float
    branch_id: int
    converged: bool
    iterations: int

    def recompose(self, params: SystemParams) -> float:
        mu_bar = params.mu_bar
        total = self.kl_cdma
        for cls, terms in zip(params.classes, self.per_class):
            share = cls.weight * params.beta * cls.mu / mu_bar
            total += share * (terms.c_awgn + terms.kl_scatter + terms.kl_mimo)
        return total


@dataclass(frozen=True)
class SolverConfig:
    """Damped-iteration settings.  ``damping`` is the starting step; on a
    residual increase it is halved (down to ``min_damping``), on steady
    decrease it recovers geometrically up to ``max_damping``."""

    tol: float = 1e-10
    damping: float = 0.5
    max_iter: int = 4000
    inner_max_iter: int = 4000
    quad_order: int = 50
    min_damping: float = 2.0**-10
    max_damping: float = 1.0
    dedup_factor: float = 10.0


@dataclass(frozen=True)
class SolveInit:
    """One starting point for the damped iteration; class hints seed the
    inner loop with (zeta2, eps_awgn) pairs."""

    r0: float
    label: str
    class_hints: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True)
class Branch:
    state: FixedPointState
    report: SEReport


class SolveError(RuntimeError):
    """No initialization converged; ``trace`` holds per-init diagnostics."""

    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# Update maps


def kl_iso(sigma0_sq: float, sigma1_sq: float) -> float:
    """KL divergence per complex dimension between zero-mean circularly
    symmetric Gaussians with isotropic covariances, in bits."""
    if sigma0_sq <= 0 or sigma1_sq <= 0:
        raise ValueError("variances must be positive")
    u = (sigma1_sq - sigma0_sq) / sigma0_sq
    return _kl_iso_u(u)


def _kl_iso_u(u: float) -> float:
    # u = sigma1^2/sigma0^2 - 1; log1p keeps accuracy for |u| << 1
    return (math.log1p(u) - u / (1.0 + u)) * LOG2E


def xi_update(zeta2: float, gamma: float, gains: ScatterGainLaw,
              eps_awgn: float) -> float:
    """Per-symbol noise variance implied by the scatterer gain law; +inf
    when the channel is disconnected (all gains zero)."""
    if zeta2 <= 0:
        raise ValueError("zeta2 must be positive")
    a, w = gains.gain_sq, gains.weights
    if a.size == 1:  # scalar fast path, the common unit-gain case
        a0 = a[0]
        if a0 == 0.0:
            return math.inf
        return (zeta2 + gamma * eps_awgn * a0) / a0
    s = float(np.sum(w * a / (zeta2 + gamma * eps_awgn * a)))
    if s == 0.0:
        return math.inf
    return 1.0 / s


def eps_mimo2_eval(zeta2: float, gamma: float, gains: ScatterGainLaw,
                   eps_awgn: float) -> float:
    """Scatterer-level mean-square error.  Algebraically
    sum_j w_j (zeta2 - zeta2^2/(zeta2 + gamma eps a_j)); evaluated in the
    product form zeta2 d/(zeta2 + d), d = gamma eps a_j, which is free of
    cancellation when d << zeta2."""
    if zeta2 <= 0:
        raise ValueError("zeta2 must be positive")
    a, w = gains.gain_sq, gains.weights
    if a.size == 1:
        d0 = gamma * eps_awgn * a[0]
        return zeta2 * d0 / (zeta2 + d0)
    d = gamma * eps_awgn * a
    return float(np.sum(w * zeta2 * d / (zeta2 + d)))


def interference_term(zeta2: float, cls: UserClass, eps_awgn: float) -> float:
    """rho * eps_mimo2 without forming the huge/tiny factors separately
    (rho can be ~1e6 when gamma is ~1e-6)."""
    a, w = cls.gains.gain_sq, cls.gains.weights
    if a.size == 1:
        a0 = a[0]
        return cls.mu * eps_awgn * a0 * zeta2 / (zeta2 + cls.gamma * eps_awgn * a0)
    d = cls.gamma * eps_awgn * a
    return cls.mu * float(np.sum(w * eps_awgn * a * zeta2 / (zeta2 + d)))


def eps_user_from(r: float, m: float) -> float:
    """Chip-level per-user error r - r^2/(r + m) in product form."""
    return r * m / (r + m) if m > 0 else 0.0


# ---------------------------------------------------------------------------
# Inner (antenna + symbol) level


@dataclass(frozen=True)
class MimoLevel:
    zeta2: float
    xi2: float
    eps_awgn: float
    eps_mimo2: float
    rho_eps_mimo2: float
    iterations: int


class InnerNoConvergence(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"inner loop stalled at residual {residual:.3e} "
                         f"after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


def mimo_level(r: float, cls: UserClass, kernels: ScalarKernels,
               config: SolverConfig | None = None,
               init: tuple[float, float] | None = None) -> MimoLevel:
    """Solve the coupled antenna/symbol level at fixed chip-level noise r.

    Damped iteration on the (zeta2, eps_awgn) pair with adaptive halving on
    residual increase; ``init`` warm-starts the pair.  Non-convergence is
    reported by exception, never silently.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    cfg = config or SolverConfig()
    c = cls.constellation
    P = c.power
    zeta2, eps = init if init is not None else (r, 0.0)
    zeta2 = max(zeta2, r * (1.0 - 1e-12))
    eps = min(max(eps, 0.0), P)
    tol = cfg.tol * 0.05
    d = cfg.damping
    prev = math.inf
    res = math.inf
    for it in range(1, cfg.inner_max_iter + 1):
        xi2 = xi_update(zeta2, cls.gamma, cls.gains, eps)
        eps_new = kernels.mmse(c, xi2)
        m = interference_term(zeta2, cls, eps_new)
        zeta2_new = r + m
        if not (math.isfinite(zeta2_new) and math.isfinite(eps_new)):
            raise InnerNoConvergence(math.inf, it)
        res = max(abs(zeta2_new - zeta2) / zeta2_new,
                  abs(eps_new - eps) / (eps_new + 1e-12 * P))
        if res <= tol:
            zeta2, eps = zeta2_new, eps_new
            break
        if res > prev:
            d = max(d * 0.5, cfg.min_damping)
        else:
            d = min(d * 1.25, cfg.max_damping)
        zeta2 += d * (zeta2_new - zeta2)
        eps += d * (eps_new - eps)
        prev = res
    else:
        raise InnerNoConvergence(res, cfg.inner_max_iter)
    # Final self-consistent pass so the stored tuple satisfies the maps to
    # machine precision given (zeta2, eps).
    xi2 = xi_update(zeta2, cls.gamma, cls.gains, eps)
    eps = kernels.mmse(c, xi2)
    m2 = eps_mimo2_eval(zeta2, cls.gamma, cls.gains, eps)
    m = interference_term(zeta2, cls, eps)
    return MimoLevel(zeta2=zeta2, xi2=xi2, eps_awgn=eps, eps_mimo2=m2,
                     rho_eps_mimo2=m, iterations=it)


def cdma_level_residual(r: float, params: SystemParams,
                        levels: list[MimoLevel]) -> float:
    """r minus the chip-level balance sigma2 + beta E[eps_user] evaluated
    from the supplied per-class inner solutions."""
    if r <= 0:
        raise ValueError("r must be positive")
    acc = 0.0
    for cls, lv in zip(params.classes, levels):
        acc += cls.weight * eps_user_from(r, lv.rho_eps_mimo2)
    return r - (params.sigma2 + params.beta * acc)


# ---------------------------------------------------------------------------
# Outer (chip) level and branch collection


def _run_init(params: SystemParams, init: SolveInit, kernels: ScalarKernels,
              cfg: SolverConfig):
    r = init.r0
    hints = list(init.class_hints) if init.class_hints is not None else \
        [None] * len(params.classes)
    d = cfg.damping
    prev = math.inf
    res = math.inf
    stop = cfg.tol * 0.3
    for it in range(1, cfg.max_iter + 1):
        levels = []
        for cls, hint in zip(params.classes, hints):
            levels.append(mimo_level(r, cls, kernels, cfg, init=hint))
        hints = [(lv.zeta2, lv.eps_awgn) for lv in levels]
        target = r - cdma_level_residual(r, params, levels)
        res = abs(target - r) / max(r, params.sigma2)
        if res <= stop:
            states = []
            for cls, lv in zip(params.classes, levels):
                states.append(ClassState(
                    zeta2=lv.zeta2, xi2=lv.xi2, eps_awgn=lv.eps_awgn,
                    eps_mimo2=lv.eps_mimo2,
                    eps_user=eps_user_from(r, lv.rho_eps_mimo2)))
            return FixedPointState(r=r, classes=tuple(states)), it
        if res > prev:
            d = max(d * 0.5, cfg.min_damping)
        else:
            d = min(d * 1.25, cfg.max_damping)
        r = r + d * (target - r)
        prev = res
    raise InnerNoConvergence(res, cfg.max_iter)


def default_inits(params: SystemParams) -> list[SolveInit]:
    """Low-noise (interference fully removed) and high-noise (interference
    at full prior power) starting points; these land in the two basins when
    branches coexist."""
    decoded = SolveInit(r0=params.sigma2, label="decoded",
                        class_hints=tuple((params.sigma2, 0.0)
                                          for _ in params.classes))
    cap = params.interference_cap()
    uncoded = SolveInit(r0=cap, label="uncoded",
                        class_hints=tuple((cap, c.constellation.power)
                                          for c in params.classes))
    return [decoded, uncoded]


def solve(params: SystemParams, config: SolverConfig | None = None,
          kernels: ScalarKernels | None = None,
          extra_inits: tuple[SolveInit, ...] = (),
          include_default_inits: bool = True) -> list[Branch]:
    """All distinct fixed points reachable from the configured starts,
    sorted ascending by spectral efficiency (ties toward larger r).

    Raises SolveError with the per-init residual trace when nothing
    converges.
    """
    cfg = config or SolverConfig()
    kern = kernels or ScalarKernels(cfg.quad_order)
    inits = list(extra_inits)
    if include_default_inits:
        inits = default_inits(params) + inits
    if not inits:
        raise ValueError("no initializations supplied")

    found: list[tuple[FixedPointState, int, str]] = []
    trace: list[dict] = []
    for init in inits:
        try:
            state, iters = _run_init(params, init, kern, cfg)
        except InnerNoConvergence as err:
            trace.append({"init": init.label, "r0": init.r0,
                          "residual": err.residual,
                          "iterations": err.iterations})
            continue
        trace.append({"init": init.label, "r0": init.r0, "residual": 0.0,
                      "iterations": iters, "r": state.r})
        found.append((state, iters, init.label))

    if not found:
        raise SolveError("no initialization converged", trace)

    # Deduplicate states whose r agree to within dedup_factor * tol.
    found.sort(key=lambda t: t[0].r)
    unique: list[tuple[FixedPointState, int, str]] = []
    for cand in found:
        if unique and abs(cand[0].r - unique[-1][0].r) <= \
                cfg.dedup_factor * cfg.tol * max(cand[0].r, unique[-1][0].r):
            continue
        unique.append(cand)

    branches = []
    for state, iters, _label in unique:
        report = spectral_efficiency(params, state, kern, tol=cfg.tol,
                                     iterations=iters)
        branches.append(Branch(state=state, report=report))
    branches.sort(key=lambda b: (b.report.se_total, -b.state.r))
    branches = [Branch(state=b.state,
                       report=replace(b.report, branch_id=i))
                for i, b in enumerate(branches)]
    return branches


def spectral_efficiency(params: SystemParams, fp: FixedPointState,
                        kernels: ScalarKernels, tol: float = 1e-10,
                        iterations: int = 0) -> SEReport:
    """Assemble the spectral-efficiency decomposition at a fixed point.

    Total rate per chip per transmit antenna: each class contributes its
    per-symbol rate plus the scatterer-level and antenna-level divergence
    corrections, and the chip level adds one global divergence term.
    """
    res = fp.max_residual(params, kernels)
    if res > tol:
        raise ValueError(f"fixed point residual {res:.3e} exceeds tolerance {tol:.1e}")
    mu_bar = params.mu_bar
    kl_cdma = _kl_iso_u((fp.r - params.sigma2) / params.sigma2) / mu_bar
    total = kl_cdma
    mmse_det = 0.0
    per_class = []
    for cls, st in zip(params.classes, fp.classes):
        c_awgn = kernels.mutual_info(cls.constellation, st.xi2)
        a, w = cls.gains.gain_sq, cls.gains.weights
        d = cls.gamma * st.eps_awgn * a
        kl_scatter = float(np.sum(w * [_kl_iso_u(di / st.zeta2) for di in d])) / cls.gamma
        kl_mimo = _kl_iso_u((st.zeta2 - fp.r) / fp.r) / cls.mu
        share = cls.weight * params.beta * cls.mu / mu_bar
        total += share * (c_awgn + kl_scatter + kl_mimo)
        mmse_det += share * c_awgn
        per_class.append(ClassSETerms(c_awgn=c_awgn, kl_scatter=kl_scatter,
                                      kl_mimo=kl_mimo))
    return SEReport(se_total=total, se_mmse_detector=mmse_det,
                    per_class=tuple(per_class), kl_cdma=kl_cdma,
                    branch_id=0, converged=True, iterations=iterations)
