"""Disorder ensembles, covariance checks and finite-volume trace estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BoxExceedsTorus, NonPositiveN
from .lattice import (
    LatticeOperatorSet,
    ModelSpec,
    build_model,
    disorder_values,
    magnetic_translations,
)
from .operators import Operator, operator_norm


@dataclass(frozen=True)
class DisorderRealization:
    """One sampled on-site potential, regenerable bit-exactly from (seed, index)."""

    seed: int
    index: int
    W: float
    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def sample_disorder(spec: ModelSpec, realization_index: int = 0) -> DisorderRealization:
    """Independent uniform on-site energies in [-W/2, W/2] per site."""
    values = disorder_values(spec, realization_index)
    return DisorderRealization(spec.seed, realization_index, spec.disorder_W,
                               values, spec)


def shift_disorder(spec: ModelSpec, values: np.ndarray,
                   shift: tuple[int, int]) -> np.ndarray:
    """(tau_a v)(n) = v(n + a): the cyclic lattice action on configurations."""
    grid = np.asarray(values, dtype=float).reshape(spec.L1, spec.L2)
    return np.roll(grid, shift=(-shift[0], -shift[1]), axis=(0, 1)).reshape(-1)


def covariance_check(spec: ModelSpec, realization: DisorderRealization,
                     shift: tuple[int, int]) -> float:
    """|| S_a H_omega S_a* - H_{tau_a omega} ||_op on the finite torus.

    Exactness of the construction: the magnetic translation conjugates the
    disordered Hamiltonian into the one built from the shifted
    configuration; the residual is pure rounding.
    """
    a1, a2 = shift
    opset = build_model(spec, disorder=realization.values)
    shifted = shift_disorder(spec, realization.values, shift)
    opset_shifted = build_model(spec, disorder=shifted)
    S1, S2 = (S.entries for S in magnetic_translations(spec))
    Sa = np.linalg.matrix_power(S1, a1 % spec.L1) @ np.linalg.matrix_power(S2, (-a2) % spec.L2)
    conj = Sa @ opset.H.entries @ Sa.conj().T
    return operator_norm(conj - opset_shifted.H.entries)


@dataclass(frozen=True)
class BoxTraceRow:
    box: tuple[int, int]
    offset: tuple[int, int]
    value: float


def trace_per_volume_estimate(opset: LatticeOperatorSet, A: Operator,
                              boxes: list[tuple[int, int]],
                              stride: int = 1) -> list[BoxTraceRow]:
    """Box-restricted traces (1/|box|) Tr(P_box A P_box) over box placements.

    For translation-covariant A the spread across placements shrinks with
    the box; the full-torus box reproduces the normalized trace exactly.
    """
    spec = opset.spec
    rows = []
    diag = np.real(np.diag(A.entries)).reshape(spec.L1, spec.L2)
    for b1, b2 in boxes:
        if not (1 <= b1 <= spec.L1 and 1 <= b2 <= spec.L2):
            raise BoxExceedsTorus(f"box ({b1}, {b2}) on torus {spec.L1}x{spec.L2}")
        for o1 in range(0, spec.L1, stride):
            for o2 in range(0, spec.L2, stride):
                sel1 = (np.arange(o1, o1 + b1) % spec.L1)
                sel2 = (np.arange(o2, o2 + b2) % spec.L2)
                val = diag[np.ix_(sel1, sel2)].sum() / (b1 * b2)
                rows.append(BoxTraceRow((b1, b2), (o1, o2), float(val)))
    return rows


@dataclass(frozen=True)
class EnsembleStats:
    mean: float
    stderr: float
    n: int
    degenerate: bool = False  # n == 1: stderr is 0 by convention


def ensemble_average(spec: ModelSpec,
                     quantity: Callable[[DisorderRealization], float],
                     n: int) -> EnsembleStats:
    """Mean and standard error of a per-realization quantity over n seeds.

    The (seed, index) scheme makes the result independent of evaluation
    order; realizations are indexed 0..n-1.
    """
    if n < 1:
        raise NonPositiveN(f"n must be >= 1, got {n}")
    vals = np.array([quantity(sample_disorder(spec, i)) for i in range(n)], dtype=float)
    mean = float(vals.mean())
    if n == 1:
        return EnsembleStats(mean, 0.0, 1, degenerate=True)
    stderr = float(vals.std(ddof=1) / math.sqrt(n))
    return EnsembleStats(mean, stderr, n)
