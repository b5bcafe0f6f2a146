"""Magnetic tight-binding models on finite tori.

The builder realizes the square-lattice hopping model with a uniform
rational flux in the two-sided gauge

    T1[n, m] = e^{+i theta n2}  for m = n - e1,
    T2[n, m] = e^{-i theta n1}  for m = n - e2,
    H = T1 + T1* + T2 + T2* + diag(disorder),

with theta = 2 pi p / q.  The magnetic translations

    S1[n, m] = e^{+i theta n2}  for m = n + e1,
    S2[n, m] = e^{+i theta n1}  for m = n - e2,

commute with the clean H and satisfy S1 S2 = e^{2 i theta} S2 S1.  Note the
plaquette phase of this gauge is e^{-2 i theta}: the pair (p, q) labels the
gauge parameter, and the physical flux per plaquette is -2 theta mod 2 pi.

Site order is row-major: index(n1, n2) = n1 * L2 + n2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    FermiOnEigenvalue,
    FluxIncommensurate,
    GapClosure,
    NonPositiveBeta,
    RangeExceedsHalfTorus,
    RequiresCleanModel,
)
from .operators import (
    Operator,
    SpectralData,
    apply_function,
    fermi_dirac,
    spectral_decompose,
)

MAGNETIC_COMMUTATION_TOL = 1e-11
GAP_CLOSURE_TOL = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Lattice geometry, flux, disorder and the torus displacement convention.

    displacement selects how position commutators are evaluated on the
    torus: "minimal_image" uses the shortest signed coordinate difference
    d_k(m, n) in (-L_k/2, L_k/2] (translation covariant, the convention
    under which the Hall trace quantizes), "open_positions" uses the raw
    coordinate difference (exact commutators with the diagonal position
    matrices, but boundary contaminated).
    """

    L1: int
    L2: int
    flux_p: int = 0
    flux_q: int = 1
    disorder_W: float = 0.0
    seed: int = 0
    displacement: str = "minimal_image"

    def __post_init__(self):
        if self.L1 < 1 or self.L2 < 1:
            raise ValueError("torus sides must be positive")
        if self.flux_q < 1:
            raise FluxIncommensurate(f"flux_q must be >= 1, got {self.flux_q}")
        if math.gcd(abs(self.flux_p), self.flux_q) != 1 and self.flux_p != 0:
            raise FluxIncommensurate(
                f"flux {self.flux_p}/{self.flux_q} must be reduced")
        if self.L1 % self.flux_q or self.L2 % self.flux_q:
            raise FluxIncommensurate(
                f"flux_q={self.flux_q} must divide both L1={self.L1} and L2={self.L2}")
        if self.disorder_W < 0:
            raise ValueError("disorder_W must be >= 0")
        if self.displacement not in ("minimal_image", "open_positions"):
            raise ValueError(f"unknown displacement mode {self.displacement!r}")

    @property
    def dim(self) -> int:
        return self.L1 * self.L2

    @property
    def theta(self) -> float:
        return 2.0 * math.pi * self.flux_p / self.flux_q

    @property
    def clean(self) -> bool:
        return self.disorder_W == 0.0

    def site_index(self, n1: int, n2: int) -> int:
        return (n1 % self.L1) * self.L2 + (n2 % self.L2)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        n1 = np.repeat(np.arange(self.L1), self.L2).astype(float)
        n2 = np.tile(np.arange(self.L2), self.L1).astype(float)
        n1.setflags(write=False)
        n2.setflags(write=False)
        return n1, n2


def disorder_values(spec: ModelSpec, realization_index: int = 0) -> np.ndarray:
    """Uniform on-site energies in [-W/2, W/2], bit-exact in (seed, index).

    Counter-based generator keyed by (seed, realization): site values never
    depend on evaluation order or worker count.
    """
    if spec.disorder_W == 0.0:
        return np.zeros(spec.dim)
    bits = np.random.Philox(key=(np.uint64(spec.seed) << np.uint64(64))
                            + np.uint64(realization_index))
    rng = np.random.Generator(bits)
    return (rng.random(spec.dim) - 0.5) * spec.disorder_W


def minimal_image_offsets(L: int) -> np.ndarray:
    """Signed minimal representative of each residue.

    Values lie in (-L/2, L/2); on even tori the antipodal residue L/2 is
    equidistant both ways and maps to 0, the unique tie-break that keeps
    the kernel antisymmetric (so dressings preserve Hermiticity and trace
    pairings exactly).
    """
    m = np.arange(L)
    out = np.where(m <= (L - 1) // 2, m, m - L).astype(float)
    if L % 2 == 0:
        out[L // 2] = 0.0
    return out


def displacement_kernels(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Kernels d_k(m, n) used for position commutators [X_k, A]_mn = d_k A_mn.

    In minimal_image mode d_k is the antisymmetric wrapped difference (see
    minimal_image_offsets); in open_positions mode the raw coordinate
    difference.
    """
    x1, x2 = spec.coords
    diff1 = x1[:, None] - x1[None, :]
    diff2 = x2[:, None] - x2[None, :]
    if spec.displacement == "minimal_image":
        off1 = minimal_image_offsets(spec.L1)
        off2 = minimal_image_offsets(spec.L2)
        diff1 = off1[np.mod(diff1, spec.L1).astype(int)]
        diff2 = off2[np.mod(diff2, spec.L2).astype(int)]
    diff1.setflags(write=False)
    diff2.setflags(write=False)
    return diff1, diff2


def position_operators(spec: ModelSpec) -> list[Operator]:
    """Diagonal position operators X_1 = diag(n1), X_2 = diag(n2)."""
    x1, x2 = spec.coords
    return [Operator(np.diag(x1), hermitian=True),
            Operator(np.diag(x2), hermitian=True)]


def _hop_matrices(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    L1, L2, th = spec.L1, spec.L2, spec.theta
    N = spec.dim
    T1 = np.zeros((N, N), dtype=complex)
    T2 = np.zeros((N, N), dtype=complex)
    for n1 in range(L1):
        for n2 in range(L2):
            n = spec.site_index(n1, n2)
            T1[n, spec.site_index(n1 - 1, n2)] = np.exp(1j * th * n2)
            T2[n, spec.site_index(n1, n2 - 1)] = np.exp(-1j * th * n1)
    return T1, T2


def magnetic_translations(spec: ModelSpec) -> list[Operator]:
    L1, L2, th = spec.L1, spec.L2, spec.theta
    N = spec.dim
    S1 = np.zeros((N, N), dtype=complex)
    S2 = np.zeros((N, N), dtype=complex)
    for n1 in range(L1):
        for n2 in range(L2):
            n = spec.site_index(n1, n2)
            S1[n, spec.site_index(n1 + 1, n2)] = np.exp(1j * th * n2)
            S2[n, spec.site_index(n1, n2 - 1)] = np.exp(1j * th * n1)
    return [Operator(S1, unitary=True), Operator(S2, unitary=True)]


@dataclass(frozen=True)
class LatticeOperatorSet:
    """Hamiltonian, positions, magnetic translations and displacement kernels."""

    spec: ModelSpec
    H: Operator
    X: list[Operator]
    S: list[Operator]
    kernels: tuple[np.ndarray, np.ndarray]
    disorder: np.ndarray

    @property
    def dim(self) -> int:
        return self.spec.dim

    @cached_property
    def spectral(self) -> SpectralData:
        return spectral_decompose(self.H)

    def spatial_derivative(self, A: Operator, k: int) -> Operator:
        """d_{X_k}(A): entrywise i d_k(m, n) A_mn per the displacement mode.

        In open_positions mode this is exactly i[X_k, A]; in minimal_image
        mode the wrapped kernel keeps the superoperator translation
        covariant across the torus seam.
        """
        return Operator(1j * self.kernels[k] * A.entries)


def build_model(spec: ModelSpec, realization_index: int = 0,
                disorder: np.ndarray | None = None) -> LatticeOperatorSet:
    """Assemble H, positions, translations and kernels for one realization."""
    T1, T2 = _hop_matrices(spec)
    H = T1 + T1.conj().T + T2 + T2.conj().T
    if disorder is None:
        disorder = disorder_values(spec, realization_index)
    else:
        disorder = np.asarray(disorder, dtype=float)
        if disorder.shape != (spec.dim,):
            raise ValueError(f"disorder must have shape ({spec.dim},)")
    H = H + np.diag(disorder)
    opset = LatticeOperatorSet(
        spec=spec,
        H=Operator(H, hermitian=True),
        X=position_operators(spec),
        S=magnetic_translations(spec),
        kernels=displacement_kernels(spec),
        disorder=disorder,
    )
    if spec.clean:
        for a, S in enumerate(opset.S):
            r = np.abs(H @ S.entries - S.entries @ H).max()
            if r > MAGNETIC_COMMUTATION_TOL:
                raise FluxIncommensurate(
                    f"[H, S_{a+1}] residual {r:.3e}: inconsistent boundary phases")
    return opset


def current_operator(opset: LatticeOperatorSet, k: int) -> Operator:
    """J_k = i[H, X_k] through the displacement kernel: J_mn = -i d_k H_mn.

    The antisymmetric kernel makes J Hermitian for every Hermitian H; on
    even tori hops across the exact antipodal distance L_k/2 carry zero
    displacement by the tie-break convention.
    """
    J = -1j * opset.kernels[k] * opset.H.entries
    return Operator(J, hermitian=True)


def fermi_projection(S: SpectralData, E_F: float) -> Operator:
    """Spectral projection onto eigenvalues <= E_F."""
    gap_dist = np.abs(S.eigenvalues - E_F).min(initial=np.inf)
    if gap_dist < 1e-9:
        warnings.warn(
            f"E_F within {gap_dist:.2e} of an eigenvalue: gap condition violated",
            FermiOnEigenvalue)
    V = S.eigenvectors.entries
    occ = S.eigenvalues <= E_F
    P = (V * occ) @ V.conj().T
    return Operator(0.5 * (P + P.conj().T), hermitian=True, projection=True)


def fermi_dirac_state(S: SpectralData, beta: float, E_F: float) -> Operator:
    """Equilibrium state 1/(1 + e^{beta (H - E_F)})."""
    if beta <= 0:
        raise NonPositiveBeta(f"beta must be > 0, got {beta}")
    return apply_function(S, fermi_dirac(beta, E_F))


@dataclass(frozen=True)
class BlochFamily:
    """Momentum fibers H(k) of the clean model at rational flux.

    The magnetic unit cell spans q sites along direction 1, so the
    magnetic Brillouin zone is k1 in [0, 2 pi / q), k2 in [0, 2 pi).  The
    torus momenta live on an (L1/q) x L2 grid inside it.
    """

    flux_p: int
    flux_q: int
    L1: int
    L2: int

    def fiber(self, k1: float, k2: float) -> np.ndarray:
        """q x q fiber: hopping e^{+-i k1} off the diagonal, 2 cos(k2 + 2 theta r) on it."""
        q = self.flux_q
        th = 2.0 * math.pi * self.flux_p / q
        Hk = np.diag(2.0 * np.cos(k2 + 2.0 * th * np.arange(q))).astype(complex)
        if q == 1:
            Hk[0, 0] += 2.0 * np.cos(k1)
            return Hk
        r = np.arange(q)
        Hk[r, (r + 1) % q] += np.exp(1j * k1)
        Hk[r, (r - 1) % q] += np.exp(-1j * k1)
        return Hk

    def torus_momenta(self) -> list[tuple[float, float]]:
        return [(2.0 * math.pi * m1 / self.L1, 2.0 * math.pi * m2 / self.L2)
                for m1 in range(self.L1 // self.flux_q)
                for m2 in range(self.L2)]

    def torus_eigenvalues(self) -> np.ndarray:
        evs = [np.linalg.eigvalsh(self.fiber(k1, k2))
               for k1, k2 in self.torus_momenta()]
        return np.sort(np.concatenate(evs))


def bloch_reduce(spec: ModelSpec) -> BlochFamily:
    """Momentum-space reduction of the clean model; disorder is not reducible."""
    if not spec.clean:
        raise RequiresCleanModel("bloch_reduce requires disorder_W = 0")
    return BlochFamily(spec.flux_p, spec.flux_q, spec.L1, spec.L2)


def _berry_sum(bloch: BlochFamily, band_count: int, n1: int, n2: int) -> float:
    """Plaquette link-phase curvature sum over the full (2 pi)^2 fiber torus.

    The fiber map is 2 pi periodic in k1 but covers the magnetic Brillouin
    zone q times, so the total curvature is q times the physical Chern
    number; `chern_number` divides the q back out.
    """
    q = bloch.flux_q
    k1s = 2.0 * math.pi * np.arange(n1) / n1
    k2s = 2.0 * math.pi * np.arange(n2) / n2
    frames = np.empty((n1, n2, q, band_count), dtype=complex)
    min_sep = np.inf
    for i, k1 in enumerate(k1s):
        for j, k2 in enumerate(k2s):
            w, v = np.linalg.eigh(bloch.fiber(k1, k2))
            if band_count < q:
                min_sep = min(min_sep, w[band_count] - w[band_count - 1])
            frames[i, j] = v[:, :band_count]
    if band_count < q and min_sep < GAP_CLOSURE_TOL:
        raise GapClosure(f"band separation {min_sep:.3e} on the momentum grid")
    total = 0.0
    for i in range(n1):
        for j in range(n2):
            ip, jp = (i + 1) % n1, (j + 1) % n2
            u = (np.linalg.det(frames[i, j].conj().T @ frames[ip, j])
                 * np.linalg.det(frames[ip, j].conj().T @ frames[ip, jp])
                 * np.linalg.det(frames[ip, jp].conj().T @ frames[i, jp])
                 * np.linalg.det(frames[i, jp].conj().T @ frames[i, j]))
            total += np.angle(u)
    return total / (2.0 * math.pi)


def chern_number(bloch: BlochFamily, band_count: int, grid: int = 60,
                 grid_refine: int = 1) -> int:
    """Chern number of the lowest `band_count` bands by the plaquette link method.

    Sums Berry curvature over the magnetic Brillouin zone with orientation
    (k1, k2), the pairing that matches the (1, 2) Hall coefficient.  The
    grid is refined by doubling until two consecutive levels round to the
    same integer.
    """
    if not 1 <= band_count <= bloch.flux_q:
        raise ValueError(f"band_count must be in 1..{bloch.flux_q}")
    prev = None
    n = grid
    q = bloch.flux_q
    for _ in range(grid_refine + 1):
        c = _berry_sum(bloch, band_count, n, n) / q
        ci = int(round(c))
        if abs(c - ci) > 1e-6:
            raise GapClosure(f"curvature sum {c} too far from an integer")
        if prev is not None and ci == prev:
            return ci
        prev = ci
        n *= 2
    raise GapClosure("Chern sum did not stabilize under grid refinement")


def covariant_from_kernel(spec: ModelSpec,
                          kernel: dict[tuple[int, int], complex]) -> Operator:
    """Twisted-convolution operator sum_a f(a) T1^{a1} T2^{a2} from a finite-range kernel.

    Offsets use the magnetic hop unitaries of the model's own gauge, so the
    result commutes with both magnetic translations exactly.
    """
    T1, T2 = _hop_matrices(spec)
    N = spec.dim
    out = np.zeros((N, N), dtype=complex)
    pow_cache: dict[tuple[int, int], np.ndarray] = {(0, 0): np.eye(N, dtype=complex)}

    def hop_power(a1: int, a2: int) -> np.ndarray:
        if (a1, a2) in pow_cache:
            return pow_cache[(a1, a2)]
        if a1 != 0:
            step = T1 if a1 > 0 else T1.conj().T
            m = step @ hop_power(a1 - int(np.sign(a1)), a2)
        else:
            step = T2 if a2 > 0 else T2.conj().T
            m = step @ hop_power(a1, a2 - int(np.sign(a2)))
        pow_cache[(a1, a2)] = m
        return m

    for (a1, a2), f in kernel.items():
        if abs(a1) > spec.L1 // 2 or abs(a2) > spec.L2 // 2:
            raise RangeExceedsHalfTorus(
                f"offset ({a1}, {a2}) exceeds half torus ({spec.L1//2}, {spec.L2//2})")
        out += f * hop_power(a1, a2)
    return Operator(out)
