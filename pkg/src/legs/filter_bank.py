"""Fixed diffusion-wavelet filter banks over increasing integer scales."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, InvalidScales, ScaleExceedsCascade
from .graph import DiffusionCascade, Graph, weighted_norm_sq


@dataclass(frozen=True)
class ScaleSequence:
    """Strictly increasing diffusion times ``0 < t_1 < ... < t_J <= m``."""

    scales: tuple[int, ...]
    m: int

    def __post_init__(self):
        s = tuple(int(t) for t in self.scales)
        object.__setattr__(self, "scales", s)
        if len(s) < 1:
            raise InvalidScales("need at least one scale")
        if s[0] < 1 or any(b <= a for a, b in zip(s, s[1:])):
            raise InvalidScales(f"scales must be strictly increasing positive integers: {s}")
        if s[-1] > self.m:
            raise ScaleExceedsCascade(f"largest scale {s[-1]} exceeds cascade depth {self.m}")

    @property
    def J(self) -> int:
        return len(self.scales)

    def selection(self) -> np.ndarray:
        """The one-hot ``J x m`` selection matrix picking these scales."""
        F = np.zeros((self.J, self.m))
        F[np.arange(self.J), np.array(self.scales) - 1] = 1.0
        return F


def dyadic_scales(J: int, m: int) -> ScaleSequence:
    """``[1, 2, 4, ..., 2^J]``: the classical dyadic bank with ``J + 1`` wavelets."""
    if J < 0:
        raise InvalidScales(f"J must be >= 0, got {J}")
    if 2 ** J > m:
        raise ScaleExceedsCascade(f"2^{J} = {2 ** J} exceeds cascade depth {m}")
    return ScaleSequence(tuple(2 ** j for j in range(J + 1)), m)


@dataclass(frozen=True, eq=False)
class FilterResponses:
    psi: list
    phi: np.ndarray

    def all(self) -> list:
        return list(self.psi) + [self.phi]


def apply_bank(cascade: DiffusionCascade, scales: ScaleSequence, X=None) -> FilterResponses:
    """Wavelet responses read straight off a cascade.

    ``psi[0] = X - P^{t_1} X``, ``psi[j] = P^{t_j} X - P^{t_{j+1}} X`` and
    ``phi = P^{t_J} X``.  ``X`` defaults to the cascade's source.
    """
    if scales.scales[-1] > cascade.m:
        raise ScaleExceedsCascade(f"scale {scales.scales[-1]} beyond cascade depth {cascade.m}")
    if X is not None:
        X = np.asarray(X, dtype=np.float64)
        src = cascade.source
        if X.reshape(src.shape[0], -1).shape != src.shape:
            raise DimensionMismatch(f"signal shape {X.shape} does not match cascade {src.shape}")
    t = scales.scales
    C = cascade.powers
    psi = [C[0] - C[t[0]]]
    psi += [C[t[j]] - C[t[j + 1]] for j in range(len(t) - 1)]
    return FilterResponses(psi=psi, phi=C[t[-1]].copy())


def _frame_objective(xi, t1, tJ):
    return xi ** (2 * tJ) + (1.0 - xi ** t1) ** 2


@lru_cache(maxsize=None)
def frame_lower_constant(t1: int, tJ: int) -> float:
    """Lower frame constant ``min_{xi in [0,1]} xi^(2 tJ) + (1 - xi^t1)^2``.

    Dense grid scan localizes the minimum, ternary search on the bracketing
    cell refines it to ~1e-12 in ``xi``.
    """
    if t1 < 1 or t1 > tJ:
        raise InvalidScales(f"need 1 <= t1 <= tJ, got t1={t1}, tJ={tJ}")
    grid = np.linspace(0.0, 1.0, 10_001)
    vals = _frame_objective(grid, t1, tJ)
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    for _ in range(200):
        a = lo + (hi - lo) / 3.0
        b = hi - (hi - lo) / 3.0
        if _frame_objective(a, t1, tJ) <= _frame_objective(b, t1, tJ):
            hi = b
        else:
            lo = a
        if hi - lo < 1e-15:
            break
    best = _frame_objective(0.5 * (lo + hi), t1, tJ)
    return float(min(best, vals[k]))


def frame_energy(g: Graph, responses: FilterResponses, x=None):
    """Weighted energy of a bank's output, paired with the input's weighted norm.

    Returns ``(energy, input_norm_sq)``.  For multi-column responses both
    are per-column arrays.  The input norm is recovered from the
    telescoping sum when ``x`` is not given.
    """
    parts = responses.all()
    energy = sum(weighted_norm_sq(g, r) for r in parts)
    if x is None:
        x = sum(parts)
    return energy, weighted_norm_sq(g, x)
