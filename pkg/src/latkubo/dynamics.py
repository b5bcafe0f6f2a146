"""Adiabatic isospectral perturbations and the time-ordered propagator.

The perturbation is switched on at rate eps through s(t) = e^{eps t} for
t <= 0 and 1 afterwards.  Each direction k carries a field component
Phi_k, a modulation f_k, and the accumulated phase

    Phi_k^eps(t) = Phi_k * integral(-inf, t) s(tau) f_k(tau) dtau,

which exponentiates to the gauge unitary G(t) = prod_k e^{+i Phi_k^eps(t) X_k}.
The perturbed Hamiltonian is the conjugation H_Phi(t) = G(t) H G(t)*, so its
spectrum never moves.  The same family admits the additive expansion
H_Phi(t) = H + W(t) with W built from iterated position commutators of H.

Propagation uses the midpoint-exponential rule; for conjugation generators
each step exponential is G(t_mid) e^{-i dt H} G(t_mid)*, which reuses one
eigendecomposition of H for the whole trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import NonPositiveEpsilon, NonPositiveStep
from .lattice import LatticeOperatorSet
from .operators import Operator, operator_norm

TAIL_TOL = 1e-8


# --- modulation profiles -------------------------------------------------

@dataclass(frozen=True)
class Constant:
    """f(t) = 1: adiabatic switching of a constant field."""

    def value(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    support_start = -math.inf

    def switched_integral(self, eps: float, t: float) -> float:
        """integral(-inf, t) s(tau) f(tau) dtau in closed form."""
        if t <= 0:
            return math.exp(eps * t) / eps
        return 1.0 / eps + t


@dataclass(frozen=True)
class CompactBump:
    """Smooth bump supported on [t0, t1], peak value 1."""

    t0: float
    t1: float

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError(f"bump needs t0 < t1, got [{self.t0}, {self.t1}]")

    @property
    def support_start(self) -> float:
        return self.t0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        u = (2.0 * t - (self.t0 + self.t1)) / (self.t1 - self.t0)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
        return out

    def switched_integral(self, eps: float, t: float) -> float:
        grid, cum = _bump_cumulative(self, eps)
        if t <= self.t0:
            return 0.0
        if t >= self.t1:
            return float(cum[-1])
        return float(np.interp(t, grid, cum))


@dataclass(frozen=True)
class FourierCosine:
    """f(t) = cos(omega0 t), optionally multiplied by a compact bump window.

    The pure (unwindowed) form admits the closed resolvent-pair evaluation
    of the conductivity; a windowed cosine falls back to time quadrature.
    """

    omega0: float
    window: CompactBump | None = None

    @property
    def support_start(self) -> float:
        return self.window.t0 if self.window is not None else -math.inf

    def value(self, t):
        base = np.cos(self.omega0 * np.asarray(t, dtype=float))
        if self.window is not None:
            base = base * self.window.value(t)
        return base

    def switched_integral(self, eps: float, t: float) -> float:
        if self.window is not None:
            grid, cum = _bump_cumulative(self, eps)
            if t <= self.window.t0:
                return 0.0
            if t >= self.window.t1:
                return float(cum[-1])
            return float(np.interp(t, grid, cum))
        w = self.omega0
        denom = eps * eps + w * w
        if t <= 0:
            return math.exp(eps * t) * (eps * math.cos(w * t) + w * math.sin(w * t)) / denom
        head = eps / denom
        tail = math.sin(w * t) / w if w != 0 else t
        return head + tail


Modulation = Constant | CompactBump | FourierCosine


@lru_cache(maxsize=64)
def _bump_cumulative(mod, eps: float, npts: int = 4001):
    """Cumulative switched integral of a compactly supported modulation."""
    t0 = mod.support_start
    t1 = mod.window.t1 if isinstance(mod, FourierCosine) else mod.t1
    # split at 0 where the switch kinks
    if t0 < 0 < t1:
        grid = np.concatenate([np.linspace(t0, 0.0, npts), np.linspace(0.0, t1, npts)[1:]])
    else:
        grid = np.linspace(t0, t1, npts)
    integrand = switch_value_array(eps, grid) * mod.value(grid)
    cum = cumulative_simpson(integrand, x=grid, initial=0.0)
    return grid, cum


# --- switch and field primitives -----------------------------------------

def switch_value(eps: float, t: float) -> float:
    """s(t) = e^{eps t} for t <= 0 and 1 for t > 0."""
    if eps <= 0:
        raise NonPositiveEpsilon(f"eps must be > 0, got {eps}")
    return math.exp(eps * t) if t <= 0 else 1.0


def switch_value_array(eps: float, t: np.ndarray) -> np.ndarray:
    if eps <= 0:
        raise NonPositiveEpsilon(f"eps must be > 0, got {eps}")
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0, np.exp(eps * np.minimum(t, 0.0)), 1.0)


@dataclass(frozen=True)
class PerturbationProfile:
    """Adiabatic rate, field vector and per-component modulations."""

    eps: float
    field: tuple[float, ...]
    modulation: tuple[Modulation, ...] = ()

    def __post_init__(self):
        if self.eps <= 0:
            raise NonPositiveEpsilon(f"eps must be > 0, got {self.eps}")
        field = tuple(float(c) for c in self.field)
        object.__setattr__(self, "field", field)
        mods = self.modulation
        if not mods:
            mods = (Constant(),) * len(field)
        elif not isinstance(mods, tuple):
            mods = (mods,) * len(field)
        if len(mods) == 1 and len(field) > 1:
            mods = mods * len(field)
        if len(mods) != len(field):
            raise ValueError("need one modulation per field component")
        object.__setattr__(self, "modulation", mods)

    @property
    def t_start(self) -> float:
        """Left edge of the perturbation's support (-inf if unbounded)."""
        return min(m.support_start for m in self.modulation)

    def effective_start(self, tail_tol: float = TAIL_TOL) -> float:
        """Finite truncation of the initial time: exact for compactly
        supported modulations, else the point where the switched tail
        drops below tail_tol of the total switched weight."""
        t0 = self.t_start
        if t0 > -math.inf:
            return t0
        return math.log(tail_tol) / self.eps

    def with_field(self, field) -> "PerturbationProfile":
        return PerturbationProfile(self.eps, tuple(field), self.modulation)

    def with_eps(self, eps: float) -> "PerturbationProfile":
        return PerturbationProfile(eps, self.field, self.modulation)


def phi_profile(p: PerturbationProfile, t: float) -> np.ndarray:
    """Accumulated field phases Phi_k^eps(t); -> 0 as t -> -inf."""
    return np.array([phi * m.switched_integral(p.eps, t)
                     for phi, m in zip(p.field, p.modulation)])


def modulation_values(p: PerturbationProfile, t) -> np.ndarray:
    return np.stack([np.asarray(m.value(t), dtype=float) for m in p.modulation])


# --- gauge conjugation ----------------------------------------------------

def gauge_phases(opset: LatticeOperatorSet, p: PerturbationProfile, t: float) -> np.ndarray:
    """Diagonal of G(t) in the site basis: e^{i sum_k Phi_k^eps(t) x_k}."""
    phi = phi_profile(p, t)
    x1, x2 = opset.spec.coords
    return np.exp(1j * (phi[0] * x1 + phi[1] * x2))


def gauge_unitary(opset: LatticeOperatorSet, p: PerturbationProfile, t: float) -> Operator:
    return Operator(np.diag(gauge_phases(opset, p, t)), unitary=True)


def perturbed_hamiltonian(opset: LatticeOperatorSet, p: PerturbationProfile,
                          t: float) -> Operator:
    """H_Phi(t) = G(t) H G(t)*: isospectral to H at every time."""
    g = gauge_phases(opset, p, t)
    out = g[:, None] * opset.H.entries * g.conj()[None, :]
    return Operator(0.5 * (out + out.conj().T), hermitian=True)


def threaded_hamiltonian(opset: LatticeOperatorSet, p: PerturbationProfile,
                         t: float) -> Operator:
    """Hopping phases twisted through the displacement kernel.

    H_mn -> H_mn e^{i sum_k Phi_k^eps(t) d_k(m, n)}.  With open positions
    this coincides with the gauge conjugation; with minimal-image kernels
    it threads the accumulated field through the torus handles, which is
    the generator under which torus transport coefficients quantize.
    """
    phi = phi_profile(p, t)
    phase = np.exp(1j * (phi[0] * opset.kernels[0] + phi[1] * opset.kernels[1]))
    out = opset.H.entries * phase
    return Operator(0.5 * (out + out.conj().T), hermitian=True)


# --- additive expansion ---------------------------------------------------

def _iterated_ad(opset: LatticeOperatorSet, order: int) -> dict[tuple[int, ...], np.ndarray]:
    """Cache of ad_X^kappa(H) = (i[X_.,.])^kappa (H) for 1 <= |kappa| <= order."""
    d = len(opset.X)
    X = [x.entries for x in opset.X]
    cache: dict[tuple[int, ...], np.ndarray] = {(0,) * d: opset.H.entries}

    def build(kappa: tuple[int, ...]) -> np.ndarray:
        if kappa in cache:
            return cache[kappa]
        j = next(i for i, kj in enumerate(kappa) if kj > 0)
        prev = build(tuple(k - (1 if i == j else 0) for i, k in enumerate(kappa)))
        out = 1j * (X[j] @ prev - prev @ X[j])
        cache[kappa] = out
        return out

    def multi_indices(r):
        if d == 1:
            yield (r,)
            return
        for k1 in range(r + 1):
            for rest in multi_indices_rec(r - k1, d - 1):
                yield (k1, *rest)

    def multi_indices_rec(r, depth):
        if depth == 1:
            yield (r,)
            return
        for k in range(r + 1):
            for rest in multi_indices_rec(r - k, depth - 1):
                yield (k, *rest)

    for r in range(1, order + 1):
        for kappa in multi_indices(r):
            build(kappa)
    return cache


def current_tensor(opset: LatticeOperatorSet, kappa: tuple[int, ...]) -> Operator:
    """J_kappa = (-1)^{|kappa|} ad_X^kappa(H) from raw position commutators."""
    cache = _iterated_ad(opset, sum(kappa))
    out = (-1.0) ** sum(kappa) * cache[kappa]
    return Operator(0.5 * (out + out.conj().T), hermitian=True)


def bch_additive_perturbation(opset: LatticeOperatorSet, p: PerturbationProfile,
                              t: float, order: int) -> Operator:
    """Order-N truncation of W(t) = H_Phi(t) - H as a sum over multi-indices.

    W_N(t) = sum_{1 <= |kappa| <= N} (1/kappa!) w_kappa(t) ad_X^kappa(H)
    with w_kappa(t) = prod_j Phi_j^eps(t)^{kappa_j}; the multinomial weight
    (|kappa| choose kappa)/|kappa|! is already folded into 1/kappa!.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    phi = phi_profile(p, t)
    cache = _iterated_ad(opset, order)
    W = np.zeros_like(opset.H.entries)
    for kappa, adk in cache.items():
        r = sum(kappa)
        if not 1 <= r <= order:
            continue
        w = np.prod([ph ** k for ph, k in zip(phi, kappa)])
        fact = np.prod([math.factorial(k) for k in kappa])
        W = W + (w / fact) * adk
    return Operator(0.5 * (W + W.conj().T), hermitian=True)


# --- time-ordered propagation ---------------------------------------------

@dataclass(frozen=True)
class PropagatorResult:
    """Discrete unitary propagator with its composition-law residual."""

    U: Operator
    t0: float
    t1: float
    dt: float
    steps: int
    cocycle_residual: float = field(default=float("nan"))


def _step_generator(opset: LatticeOperatorSet, p: PerturbationProfile,
                    generator: str):
    """Returns fn(tm, dt) -> one midpoint step unitary (dense matrix)."""
    if generator == "conjugation":
        S = opset.spectral
        V = S.eigenvectors.entries
        cache = {}

        def step(tm: float, dt: float) -> np.ndarray:
            if dt not in cache:
                cache[dt] = (V * np.exp(-1j * dt * S.eigenvalues)) @ V.conj().T
            g = gauge_phases(opset, p, tm)
            return g[:, None] * cache[dt] * g.conj()[None, :]

        return step
    if generator == "displacement":

        def step(tm: float, dt: float) -> np.ndarray:
            Hm = threaded_hamiltonian(opset, p, tm).entries
            w, v = np.linalg.eigh(Hm)
            return (v * np.exp(-1j * dt * w)) @ v.conj().T

        return step
    raise ValueError(f"unknown generator {generator!r}")


def _propagate_matrix(opset, p, t0: float, t1: float, dt: float,
                      generator: str) -> tuple[np.ndarray, int, float]:
    if dt <= 0:
        raise NonPositiveStep(f"dt must be > 0, got {dt}")
    if t1 == t0:
        return np.eye(opset.dim, dtype=complex), 0, dt
    span = t1 - t0
    steps = max(1, math.ceil(abs(span) / dt - 1e-12))
    h = span / steps
    step = _step_generator(opset, p, generator)
    U = np.eye(opset.dim, dtype=complex)
    for i in range(steps):
        tm = t0 + (i + 0.5) * h
        U = step(tm, h) @ U
    return U, steps, abs(h)


def propagate(opset: LatticeOperatorSet, p: PerturbationProfile, t0: float,
              t1: float, dt: float, generator: str = "conjugation",
              check_cocycle: bool = True) -> PropagatorResult:
    """U(t1, t0) as the time-ordered product of midpoint exponentials.

    Reversed order (t1 < t0) is the adjoint of the forward propagator.
    When check_cocycle is set, the interval is additionally propagated in
    two halves and the composition defect recorded.
    """
    if t1 < t0:
        fwd = propagate(opset, p, t1, t0, dt, generator, check_cocycle)
        return PropagatorResult(fwd.U.adjoint(), t0, t1, fwd.dt, fwd.steps,
                                fwd.cocycle_residual)
    U, steps, h = _propagate_matrix(opset, p, t0, t1, dt, generator)
    residual = float("nan")
    if check_cocycle and steps > 1:
        tm = 0.5 * (t0 + t1)
        Ua, _, _ = _propagate_matrix(opset, p, t0, tm, dt, generator)
        Ub, _, _ = _propagate_matrix(opset, p, tm, t1, dt, generator)
        residual = operator_norm(Ub @ Ua - U)
    return PropagatorResult(Operator(U, unitary=True), t0, t1, h, steps, residual)


def free_propagator(opset: LatticeOperatorSet, t: float) -> np.ndarray:
    """U0(t) = e^{-itH}."""
    S = opset.spectral
    V = S.eigenvectors.entries
    return (V * np.exp(-1j * t * S.eigenvalues)) @ V.conj().T


def duhamel_residual(opset: LatticeOperatorSet, p: PerturbationProfile,
                     t: float, s: float, dt: float,
                     generator: str = "conjugation") -> float:
    """Defect of U(t,s) - U0(t-s) = -i integral(s,t) U(t,tau) W(tau) U0(tau-s) dtau.

    The right side is evaluated by composite Simpson on nodes aligned with
    the step grid; U(t, tau) comes from a second pass over the same steps,
    so the residual isolates the integrator and quadrature error.
    """
    if dt <= 0:
        raise NonPositiveStep(f"dt must be > 0, got {dt}")
    if t == s:
        return 0.0
    if t < s:
        return duhamel_residual(opset, p, s, t, dt, generator)
    # node every `m` steps; force an even node count for Simpson
    m = 4
    nodes = max(2, math.ceil((t - s) / (m * dt)))
    nodes += nodes % 2
    h_node = (t - s) / nodes
    steps_per_node = max(1, math.ceil(h_node / dt - 1e-12))
    h = h_node / steps_per_node
    step = _step_generator(opset, p, generator)
    N = opset.dim

    def W_at(tau: float) -> np.ndarray:
        return perturbed_hamiltonian(opset, p, tau).entries - opset.H.entries

    # pass 1: full propagator
    U_ts = np.eye(N, dtype=complex)
    for i in range(nodes * steps_per_node):
        U_ts = step(s + (i + 0.5) * h, h) @ U_ts
    # pass 2: accumulate Simpson terms with U(t,tau) = U(t,s) U(tau,s)^*
    weights = np.ones(nodes + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= h_node / 3.0
    U_tau = np.eye(N, dtype=complex)
    integral = np.zeros((N, N), dtype=complex)
    for j in range(nodes + 1):
        tau = s + j * h_node
        U_t_tau = U_ts @ U_tau.conj().T
        integral += weights[j] * (U_t_tau @ W_at(tau) @ free_propagator(opset, tau - s))
        if j < nodes:
            for i in range(steps_per_node):
                U_tau = step(tau + (i + 0.5) * h, h) @ U_tau
    lhs = U_ts - free_propagator(opset, t - s)
    return operator_norm(lhs - (-1j) * integral)
