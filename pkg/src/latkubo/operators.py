"""Finite-dimensional tracial-algebra toolkit.

Dense complex matrices with a normalized (or single-site) trace stand in
for the algebra of observables.  On top of them live the pieces every
response calculation needs: spectral calculus, Schatten norms, derivations
i[X, .], the Liouvillian A -> -i[H, A] with its resolvent, Heisenberg
evolution, and the pinching projection onto the Liouvillian kernel.

Sign conventions, fixed once and used everywhere:

    L_H(A)   = -i[H, A]          (eigenbasis action  -i(E_m - E_n) A_mn)
    alpha_t  = exp(t L_H),  alpha_t(A) = e^{-itH} A e^{+itH}
    resolvent((eps + i kappa) - L_H)^{-1}  <->  A_mn / (eps + i kappa + i(E_m - E_n))

so that integral(0, inf) e^{-eps tau} alpha_tau(A) dtau = (eps - L_H)^{-1}(A).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    InvalidP,
    NonPositiveEpsilon,
    NotHermitian,
)

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
PROJECTION_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-10


def _as_matrix(entries: np.ndarray) -> np.ndarray:
    a = np.asarray(entries, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Operator:
    """Dense complex matrix with optional hermitian/unitary/projection flags.

    Flags are promises checked at construction time; operations that rely
    on a flag (e.g. spectral decomposition) refuse inputs without it.
    """

    entries: np.ndarray
    hermitian: bool = False
    unitary: bool = False
    projection: bool = False

    def __post_init__(self):
        a = _as_matrix(self.entries)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        if self.projection and not self.hermitian:
            object.__setattr__(self, "hermitian", True)
        if self.hermitian:
            r = np.abs(a - a.conj().T).max(initial=0.0)
            if r > HERMITIAN_TOL:
                raise NotHermitian(f"symmetry residual {r:.3e} > {HERMITIAN_TOL}")
        if self.unitary:
            r = np.abs(a @ a.conj().T - np.eye(self.dim)).max(initial=0.0)
            if r > UNITARY_TOL:
                raise ValueError(f"unitarity residual {r:.3e} > {UNITARY_TOL}")
        if self.projection:
            r = np.abs(a @ a - a).max(initial=0.0)
            if r > PROJECTION_TOL:
                raise ValueError(f"idempotency residual {r:.3e} > {PROJECTION_TOL}")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def adjoint(self) -> "Operator":
        return Operator(self.entries.conj().T, hermitian=self.hermitian,
                        unitary=self.unitary, projection=self.projection)

    def __add__(self, other: "Operator") -> "Operator":
        _check_dims(self, other)
        return Operator(self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_dims(self, other)
        return Operator(self.entries - other.entries)

    def __mul__(self, c: complex) -> "Operator":
        return Operator(self.entries * c)

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        _check_dims(self, other)
        return Operator(self.entries @ other.entries)


def identity(dim: int) -> Operator:
    return Operator(np.eye(dim), hermitian=True, unitary=True, projection=True)


def hermitian(entries: np.ndarray) -> Operator:
    """Wrap a matrix promised to be Hermitian (checked)."""
    return Operator(entries, hermitian=True)


def _check_dims(*ops) -> int:
    dims = {o.dim if isinstance(o, Operator) else o.shape[0] for o in ops}
    if len(dims) != 1:
        raise DimMismatch(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


@dataclass(frozen=True)
class SpectralData:
    """Eigendecomposition H = V diag(eigenvalues) V* of a Hermitian operator.

    Eigenvalues ascend; `eigenvectors` carries the unitary flag.  All
    functional calculus and every Liouvillian operation run through this.
    """

    eigenvalues: np.ndarray
    eigenvectors: Operator
    source: Operator
    bohr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)
        if np.any(np.diff(ev) < 0):
            raise ValueError("eigenvalues must ascend")
        if not self.eigenvectors.unitary:
            raise NotHermitian("eigenvector matrix must carry the unitary flag")
        V = self.eigenvectors.entries
        rec = (V * ev) @ V.conj().T
        scale = 1.0 + operator_norm(self.source)
        r = np.abs(rec - self.source.entries).max()
        if r > RECONSTRUCTION_TOL * scale:
            raise NotHermitian(f"reconstruction residual {r:.3e} exceeds tolerance")
        # Bohr frequency table E_m - E_n, reused by every superoperator below.
        om = ev[:, None] - ev[None, :]
        om.setflags(write=False)
        object.__setattr__(self, "bohr", om)

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def to_eigenbasis(self, A: np.ndarray) -> np.ndarray:
        V = self.eigenvectors.entries
        return V.conj().T @ A @ V

    def from_eigenbasis(self, A: np.ndarray) -> np.ndarray:
        V = self.eigenvectors.entries
        return V @ A @ V.conj().T


@dataclass(frozen=True)
class TracialAlgebra:
    """Trace convention: normalized Tr/dim, or the expectation at one site.

    `site` mode models the trace per unit volume of covariant lattice
    operators: T(A) = <delta_ref | A | delta_ref>.  For translation
    covariant operators the two modes agree.
    """

    dim: int
    trace_mode: str = "normalized"
    reference_site: int = 0

    def __post_init__(self):
        if self.trace_mode not in ("normalized", "site"):
            raise ValueError(f"unknown trace_mode {self.trace_mode!r}")
        if self.dim < 1:
            raise DimMismatch("dim must be positive")

    def trace(self, entries: np.ndarray) -> complex:
        if self.trace_mode == "normalized":
            return complex(np.trace(entries)) / self.dim
        return complex(entries[self.reference_site, self.reference_site])


def spectral_decompose(H: Operator) -> SpectralData:
    """Dense eigendecomposition of a Hermitian operator, eigenvalues ascending."""
    if not H.hermitian:
        raise NotHermitian("spectral_decompose requires the hermitian flag")
    w, v = np.linalg.eigh(H.entries)
    return SpectralData(w, Operator(v, unitary=True), H)


def apply_function(S: SpectralData, f: Callable[[np.ndarray], np.ndarray]) -> Operator:
    """f(H) = V diag(f(lambda_i)) V*; result is Hermitian for real f."""
    vals = np.asarray(f(S.eigenvalues), dtype=float)
    V = S.eigenvectors.entries
    out = (V * vals) @ V.conj().T
    return Operator(0.5 * (out + out.conj().T), hermitian=True)


def normalized_trace(alg: TracialAlgebra, A: Operator) -> complex:
    if A.dim != alg.dim:
        raise DimMismatch(f"operator dim {A.dim} != algebra dim {alg.dim}")
    return alg.trace(A.entries)


def operator_norm(A: Operator | np.ndarray) -> float:
    a = A.entries if isinstance(A, Operator) else A
    return float(np.linalg.norm(a, 2))


def schatten_norm(alg: TracialAlgebra, A: Operator, p: float) -> float:
    """||A||_p = T(|A|^p)^(1/p); p = inf gives the operator norm."""
    if A.dim != alg.dim:
        raise DimMismatch(f"operator dim {A.dim} != algebra dim {alg.dim}")
    if p != np.inf and p < 1:
        raise InvalidP(f"p must be >= 1 or inf, got {p}")
    if p == np.inf:
        return operator_norm(A)
    if alg.trace_mode == "site":
        # |A|^p at the reference site via the svd of A
        u, s, vh = np.linalg.svd(A.entries)
        absA_p = (vh.conj().T * s**p) @ vh
        return float(absA_p[alg.reference_site, alg.reference_site].real) ** (1.0 / p)
    s = np.linalg.svd(A.entries, compute_uv=False)
    return float(np.mean(s**p)) ** (1.0 / p)


def commutator(A: Operator, B: Operator) -> Operator:
    _check_dims(A, B)
    return Operator(A.entries @ B.entries - B.entries @ A.entries)


def derivation(X: Operator, A: Operator) -> Operator:
    """Spatial derivation d_X(A) = i[X, A] for Hermitian X."""
    if not X.hermitian:
        raise NotHermitian("derivation generator must be Hermitian")
    _check_dims(X, A)
    return Operator(1j * (X.entries @ A.entries - A.entries @ X.entries))


def liouvillian_apply(S: SpectralData, A: Operator) -> Operator:
    """L_H(A) = -i[H, A]; in the eigenbasis multiplies entries by -i(E_m - E_n)."""
    if S.dim != A.dim:
        raise DimMismatch(f"spectral dim {S.dim} != operator dim {A.dim}")
    At = S.to_eigenbasis(A.entries)
    return Operator(S.from_eigenbasis(-1j * S.bohr * At))


def liouvillian_resolvent(S: SpectralData, eps: float, kappa: float, A: Operator) -> Operator:
    """((eps + i kappa) - L_H)^{-1}(A): entrywise 1/(eps + i kappa + i(E_m - E_n)).

    Equals the Laplace transform integral(0,inf) e^{-(eps + i kappa) tau}
    alpha_tau(A) dtau, which is the analytically forced orientation of the
    resolvent identity (checked against adaptive quadrature in the tests).
    """
    if eps <= 0:
        raise NonPositiveEpsilon(f"eps must be > 0, got {eps}")
    if S.dim != A.dim:
        raise DimMismatch(f"spectral dim {S.dim} != operator dim {A.dim}")
    At = S.to_eigenbasis(A.entries)
    return Operator(S.from_eigenbasis(At / (eps + 1j * kappa + 1j * S.bohr)))


def heisenberg_evolve(S: SpectralData, t: float, A: Operator) -> Operator:
    """alpha_t(A) = e^{-itH} A e^{+itH}; a *-isometry in every Schatten norm."""
    if S.dim != A.dim:
        raise DimMismatch(f"spectral dim {S.dim} != operator dim {A.dim}")
    At = S.to_eigenbasis(A.entries)
    return Operator(S.from_eigenbasis(np.exp(-1j * t * S.bohr) * At))


def default_degeneracy_tol(S: SpectralData) -> float:
    scale = float(np.abs(S.eigenvalues).max(initial=0.0))
    return 1e-9 * scale if scale > 0 else 1e-9


def pinching_projector(S: SpectralData, A: Operator, degeneracy_tol: float | None = None
                       ) -> tuple[Operator, Operator]:
    """Split A into the Liouvillian-kernel part and its complement.

    In the eigenbasis the kernel part keeps entries with |E_m - E_n| <=
    degeneracy_tol, the complement the rest.  The pair reproduces A, and
    both maps are idempotent and mutually annihilating.  The complement is
    the strong eps -> 0 limit of L(L - eps)^{-1}.
    """
    if degeneracy_tol is None:
        degeneracy_tol = default_degeneracy_tol(S)
    if degeneracy_tol < 0:
        raise NonPositiveEpsilon("degeneracy_tol must be >= 0")
    At = S.to_eigenbasis(A.entries)
    keep = np.abs(S.bohr) <= degeneracy_tol
    P_part = S.from_eigenbasis(np.where(keep, At, 0))
    Pperp_part = S.from_eigenbasis(np.where(keep, 0, At))
    return Operator(P_part), Operator(Pperp_part)


def random_hermitian(dim: int, rng: np.random.Generator) -> Operator:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return Operator((a + a.conj().T) / 2, hermitian=True)


def random_operator(dim: int, rng: np.random.Generator) -> Operator:
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return Operator(a)


def random_projection(dim: int, rank: int, rng: np.random.Generator) -> Operator:
    """Random rank-`rank` orthogonal projection from a Haar-ish frame."""
    a = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    q, _ = np.linalg.qr(a)
    p = q @ q.conj().T
    return Operator(0.5 * (p + p.conj().T), hermitian=True, projection=True)


def conjugate(U: Operator, A: Operator) -> Operator:
    """U A U* preserving the hermitian/projection flags of A."""
    _check_dims(U, A)
    out = U.entries @ A.entries @ U.entries.conj().T
    if A.hermitian:
        out = 0.5 * (out + out.conj().T)
    return Operator(out, hermitian=A.hermitian, projection=A.projection)


def fermi_dirac(beta: float, E_F: float) -> Callable[[np.ndarray], np.ndarray]:
    """Occupation function x -> 1/(1 + e^{beta (x - E_F)}), overflow safe."""
    def f(x: np.ndarray) -> np.ndarray:
        z = beta * (np.asarray(x, dtype=float) - E_F)
        out = np.empty_like(z)
        pos = z > 0
        out[pos] = np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
        out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
        return out
    return f
