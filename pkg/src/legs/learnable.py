"""Learnable scale selection: ``F = softmax(Theta)`` and the relaxed wavelet bank.

Rows of ``F`` are reordered on every forward pass so that their argmax
positions are nondecreasing; ``row_order`` remembers where each sorted row
came from so gradients can be routed back to the right row of ``Theta``.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidShape, NonFiniteParameter
from .graph import DiffusionCascade, Graph, diffusion_cascade, weighted_norm_sq

WARM_KAPPA = 4.0
DEFAULT_THRESHOLD = 1e-3

_faults: set[str] = set()


@contextlib.contextmanager
def inject_fault(name: str):
    """Test hook. ``"flip_psi_sign"`` negates the first band-pass response."""
    _faults.add(name)
    try:
        yield
    finally:
        _faults.discard(name)


@dataclass
class SelectionParams:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2 or self.theta.shape[0] > self.theta.shape[1]:
            raise InvalidShape(f"theta must be J x m with J <= m, got {self.theta.shape}")

    @property
    def J(self) -> int:
        return self.theta.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True, eq=False)
class SelectionMatrix:
    F: np.ndarray
    row_order: np.ndarray

    @property
    def J(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.F.shape[1]

    def expected_scales(self) -> np.ndarray:
        """``sum_t t * F[j, t]`` per (sorted) row."""
        return self.F @ np.arange(1, self.m + 1)

    @classmethod
    def fixed(cls, F) -> "SelectionMatrix":
        F = np.asarray(F, dtype=np.float64)
        return cls(F=F, row_order=np.arange(F.shape[0]))


def init_theta(J: int, m: int, scheme: str = "dyadic_warm", seed: int | None = None) -> SelectionParams:
    """``dyadic_warm`` puts ``WARM_KAPPA`` at ``t = 2^(j-1)``, ``uniform`` is all
    zeros and ``random`` draws standard normals from ``seed``."""
    if J < 1 or m < 1 or J > m:
        raise InvalidShape(f"need 1 <= J <= m, got J={J}, m={m}")
    if scheme == "uniform":
        theta = np.zeros((J, m))
    elif scheme == "dyadic_warm":
        if 2 ** (J - 1) > m:
            raise InvalidShape(f"dyadic warm start needs 2^(J-1) <= m, got J={J}, m={m}")
        theta = np.zeros((J, m))
        theta[np.arange(J), 2 ** np.arange(J) - 1] = WARM_KAPPA
    elif scheme == "random":
        theta = np.random.default_rng(seed).standard_normal((J, m))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return SelectionParams(theta)


def softmax_rows(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def selection_matrix(params: SelectionParams) -> SelectionMatrix:
    theta = params.theta
    if not np.all(np.isfinite(theta)):
        raise NonFiniteParameter("theta has non-finite entries")
    F = softmax_rows(theta)
    lead = np.argmax(F, axis=1)
    # stable sort keeps ties in original row order
    order = np.argsort(lead, kind="stable")
    return SelectionMatrix(F=F[order], row_order=order)


def bank_coefficients(F: np.ndarray) -> np.ndarray:
    """Map a ``J x m`` selection to ``(J+1) x (m+1)`` cascade weights.

    Response ``k`` of the bank is ``sum_t A[k, t] P^t X``; row ``k < J`` is a
    band-pass filter and row ``J`` the low-pass one.
    """
    J, m = F.shape
    A = np.zeros((J + 1, m + 1))
    A[0, 0] = 1.0
    A[:J, 1:] -= F
    A[1:, 1:] += F
    return A


def coefficients_adjoint(dA: np.ndarray) -> np.ndarray:
    """Pull a gradient on the cascade weights back onto ``F``."""
    return dA[1:, 1:] - dA[:-1, 1:]


def responses_from_coefficients(A: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """``R[k] = sum_t A[k, t] powers[t]``, shape ``(J+1, n, N)``."""
    R = np.tensordot(A, powers, axes=1)
    if "flip_psi_sign" in _faults:
        R[min(1, R.shape[0] - 2)] *= -1.0
    return R


@dataclass(frozen=True, eq=False)
class LegsResponses:
    psi: list
    phi: np.ndarray
    coefficients: np.ndarray
    cascade: DiffusionCascade

    def all(self) -> list:
        return list(self.psi) + [self.phi]


def legs_apply(F: SelectionMatrix | np.ndarray, cascade: DiffusionCascade, X=None) -> LegsResponses:
    """Relaxed wavelets as weighted sums of cached diffusion steps."""
    Fm = F.F if isinstance(F, SelectionMatrix) else np.asarray(F, dtype=np.float64)
    if Fm.shape[1] != cascade.m:
        raise DimensionMismatch(f"selection has {Fm.shape[1]} columns, cascade depth is {cascade.m}")
    if X is not None:
        X = np.asarray(X, dtype=np.float64)
        if X.reshape(cascade.source.shape[0], -1).shape != cascade.source.shape:
            raise DimensionMismatch(f"signal shape {X.shape} does not match cascade")
    A = bank_coefficients(Fm)
    R = responses_from_coefficients(A, cascade.powers)
    return LegsResponses(psi=list(R[:-1]), phi=R[-1], coefficients=A, cascade=cascade)


def sparsify(F: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    Fs = np.where(F < threshold, 0.0, F)
    sums = Fs.sum(axis=1, keepdims=True)
    return Fs / np.where(sums == 0, 1.0, sums)


def has_ordered_disjoint_support(F: np.ndarray) -> bool:
    """True when every support element of row j precedes every one of row j+1."""
    supports = [np.flatnonzero(row != 0) for row in F]
    if any(s.size == 0 for s in supports):
        return False
    return all(a.max() < b.min() for a, b in zip(supports, supports[1:]))


@dataclass(frozen=True)
class NonexpansiveReport:
    support_ok: bool
    max_energy_ratio: float
    sparsified: np.ndarray


def check_nonexpansive(
    F: SelectionMatrix | np.ndarray,
    threshold: float,
    g: Graph,
    trials: int,
    alpha: float = 0.5,
    seed: int = 0,
) -> NonexpansiveReport:
    """Certificate for the relaxed bank built from a thresholded copy of ``F``.

    The energy ratio is measured in the ``D^{-1/2}``-weighted norm over
    ``trials`` Gaussian signals, all diffused in a single cascade.
    """
    Fm = F.F if isinstance(F, SelectionMatrix) else np.asarray(F, dtype=np.float64)
    Fs = sparsify(Fm, threshold)
    X = np.random.default_rng(seed).standard_normal((g.n, trials))
    cascade = diffusion_cascade(g, alpha, X, Fs.shape[1])
    R = responses_from_coefficients(bank_coefficients(Fs), cascade.powers)
    energy = sum(weighted_norm_sq(g, r) for r in R)
    ratio = energy / weighted_norm_sq(g, X)
    return NonexpansiveReport(
        support_ok=has_ordered_disjoint_support(Fs),
        max_energy_ratio=float(np.max(ratio)),
        sparsified=Fs,
    )
