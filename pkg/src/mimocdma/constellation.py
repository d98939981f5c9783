"""Input constellations: discrete complex alphabets and the Gaussian sentinel.

Downstream channel kernels treat the two kinds differently: discrete
alphabets are integrated numerically, while the Gaussian kind dispatches
to exact closed forms, so a Gaussian input never has to be approximated
by a large discrete alphabet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DISCRETE = "discrete"
GAUSSIAN = "gaussian"

_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class Constellation:
    """Complex input distribution with mean power ``power``.

    ``points``/``probs`` describe a finite alphabet when ``kind`` is
    ``"discrete"``; for ``kind == "gaussian"`` they are empty and ``power``
    is the variance of the circularly symmetric input.  ``pam_levels`` is
    set for square QAM alphabets and holds the per-quadrature real levels,
    which lets kernels work one real dimension at a time.
    """

    kind: str
    points: np.ndarray
    probs: np.ndarray
    power: float
    name: str = "custom"
    pam_levels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        pr = np.asarray(self.probs, dtype=float)
        pts.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", pr)
        if self.pam_levels is not None:
            lv = np.asarray(self.pam_levels, dtype=float)
            lv.setflags(write=False)
            object.__setattr__(self, "pam_levels", lv)
        object.__setattr__(self, "power", float(self.power))
        self.validate()

    @property
    def is_gaussian(self) -> bool:
        return self.kind == GAUSSIAN

    @property
    def size(self) -> int:
        return len(self.points)

    def mean(self) -> complex:
        if self.is_gaussian:
            return 0j
        return complex(np.sum(self.probs * self.points))

    def entropy_bits(self) -> float:
        """Alphabet entropy in bits (upper bound on the channel rate)."""
        if self.is_gaussian:
            return math.inf
        p = self.probs[self.probs > 0]
        return float(-np.sum(p * np.log2(p)))

    def validate(self) -> None:
        if self.kind not in (DISCRETE, GAUSSIAN):
            raise ValueError(f"unknown constellation kind {self.kind!r}")
        if not (self.power > 0):
            raise ValueError("constellation power must be positive")
        if self.is_gaussian:
            if self.points.size or self.probs.size:
                raise ValueError("gaussian constellation carries no alphabet")
            return
        if self.points.size == 0 or self.points.shape != self.probs.shape:
            raise ValueError("points and probs must be nonempty and congruent")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > _ATOL:
            raise ValueError("probabilities must sum to one")
        p_emp = float(np.sum(self.probs * np.abs(self.points) ** 2))
        if abs(p_emp - self.power) > _ATOL * max(1.0, self.power):
            raise ValueError(
                f"declared power {self.power} != alphabet power {p_emp}"
            )

    def to_dict(self) -> dict:
        if self.is_gaussian:
            return {"kind": self.kind, "power": self.power, "name": self.name}
        return {
            "kind": self.kind,
            "power": self.power,
            "name": self.name,
            "points_re": self.points.real.tolist(),
            "points_im": self.points.imag.tolist(),
            "probs": self.probs.tolist(),
        }


def make_qam(order: int, power: float) -> Constellation:
    """Equiprobable square QAM grid scaled to the requested mean power.

    ``order`` must be a power of 4 (4 -> QPSK, 16, 64, ...) so the alphabet
    factorizes into two identical real PAM alphabets carrying power/2 each.
    """
    if not isinstance(order, (int, np.integer)) or order < 4:
        raise ValueError(f"QAM order must be an integer >= 4, got {order!r}")
    log4 = round(math.log(order, 4))
    if 4**log4 != order:
        raise ValueError(f"QAM order must be a power of 4, got {order}")
    if not (power > 0):
        raise ValueError("power must be positive")
    m = 2**log4  # points per real dimension
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    scale = math.sqrt((power / 2.0) / np.mean(levels**2))
    pam = scale * levels
    grid = pam[:, None] + 1j * pam[None, :]
    points = grid.ravel()
    probs = np.full(points.size, 1.0 / points.size)
    name = "qpsk" if order == 4 else f"qam{order}"
    return Constellation(DISCRETE, points, probs, power, name=name, pam_levels=pam)


def make_gaussian(power: float) -> Constellation:
    """Circularly symmetric complex Gaussian input of variance ``power``."""
    if not (power > 0):
        raise ValueError("power must be positive")
    return Constellation(GAUSSIAN, np.empty(0), np.empty(0), power, name="gaussian")


def from_name(name: str, power: float = 1.0) -> Constellation:
    """Resolve the config-file identifiers: qpsk, qam16, qam64, gaussian."""
    key = name.strip().lower()
    if key == "gaussian":
        return make_gaussian(power)
    if key == "qpsk":
        return make_qam(4, power)
    if key.startswith("qam"):
        try:
            order = int(key[3:])
        except ValueError:
            raise ValueError(f"unknown constellation name {name!r}") from None
        return make_qam(order, power)
    raise ValueError(f"unknown constellation name {name!r}")
