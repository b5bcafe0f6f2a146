"""State evolutions, net currents and conductivity coefficients.

Routes to the same physics:

  fd          finite differences of the macroscopic net current in the field
  kubo        time quadrature of the linear-response integral
  resolvent   closed evaluation through the Liouvillian resolvent
              (constant or pure-cosine modulation)
  adiabatic   eps -> 0 projection formula through the pinching
  streda      Fermi-projection commutator formula (projection states)

Conventions, anchored operationally on the fd route (the derivative of the
net current at zero field) and verified against each other in the tests:

  sigma_k[J](t)      = - integral(-inf, t) s(tau) f_k(tau) T(J alpha_{t-tau}(d_k rho)) dtau
  sigma~_k(t), f = 1 = - e^{eps t} T(J ((eps) - L_H)^{-1}(d_k rho))
  adiabatic limit    = - T(Pperp(Q_J) d_k rho),     J_offdiag = L_H(Q_J)
  streda             = - i T(P [d_k P, d_j P])      (= Chern/(2 pi) per site)

All position derivatives d_k go through the displacement kernels of the
operator set, so one codepath serves both torus conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    Constant,
    FourierCosine,
    PerturbationProfile,
    _propagate_matrix,
    _step_generator,
    modulation_values,
    phi_profile,
    switch_value_array,
)
from .errors import (
    DiagonalObstruction,
    FermiOnEigenvalue,
    NonPositiveStep,
    NotEquilibrium,
    NotSpectralProjection,
    StepTooLarge,
    UnsupportedModulation,
)
from .lattice import LatticeOperatorSet, current_operator, fermi_dirac_state, fermi_projection
from .operators import (
    Operator,
    SpectralData,
    TracialAlgebra,
    schatten_norm,
)

EQUILIBRIUM_TOL = 1e-10
FORM_AGREEMENT_TOL = 1e-10
TAIL_TOL = 1e-8


def _generator_for(opset: LatticeOperatorSet) -> str:
    return ("displacement" if opset.spec.displacement == "minimal_image"
            else "conjugation")


def _phase(opset: LatticeOperatorSet, p: PerturbationProfile, t: float) -> np.ndarray:
    phi = phi_profile(p, t)
    return np.exp(1j * (phi[0] * opset.kernels[0] + phi[1] * opset.kernels[1]))


def _check_equilibrium(opset: LatticeOperatorSet, rho: Operator) -> None:
    r = np.abs(opset.H.entries @ rho.entries - rho.entries @ opset.H.entries).max()
    if r > EQUILIBRIUM_TOL * (1.0 + np.abs(opset.H.entries).max()):
        raise NotEquilibrium(f"[H, rho] residual {r:.3e}")


def interaction_state(opset: LatticeOperatorSet, p: PerturbationProfile,
                      rho: Operator, t: float) -> Operator:
    """State dragged along by the gauge alone: entries rho_mn e^{i Phi.d(m,n)}.

    With open positions this is exactly G(t) rho G(t)*; the minimal-image
    kernel version is its translation-covariant torus counterpart.  Trace
    and Hermiticity are preserved exactly in both modes.
    """
    return Operator(rho.entries * _phase(opset, p, t), hermitian=rho.hermitian)


def dressed_observable(opset: LatticeOperatorSet, p: PerturbationProfile,
                       J: Operator, t: float) -> Operator:
    """Instantaneously perturbed observable J_Phi(t), same dressing as the state."""
    return Operator(J.entries * _phase(opset, p, t), hermitian=J.hermitian)


def full_state_direct(opset: LatticeOperatorSet, p: PerturbationProfile,
                      rho: Operator, t: float, dt: float,
                      tail_tol: float = TAIL_TOL) -> Operator:
    """State propagated from the (truncated) infinite past by the driven dynamics."""
    _check_equilibrium(opset, rho)
    s_min = p.effective_start(tail_tol)
    if t <= s_min:
        return rho
    U, _, _ = _propagate_matrix(opset, p, s_min, t, dt, _generator_for(opset))
    out = U @ rho.entries @ U.conj().T
    return Operator(0.5 * (out + out.conj().T), hermitian=True)


@dataclass(frozen=True)
class EvolutionPair:
    """Interaction and full evolutions with the linear-response kernel K."""

    t: float
    rho_int: Operator
    rho_full: Operator
    K: list[Operator]
    method: str
    tail_truncation: float
    dt: float

    def expansion_residual(self, field: tuple[float, ...],
                           alg: TracialAlgebra) -> float:
        """|| rho_full - rho_int - sum_k Phi_k K_k ||_1."""
        acc = self.rho_full.entries - self.rho_int.entries
        for phk, Kk in zip(field, self.K):
            acc = acc - phk * Kk.entries
        return schatten_norm(alg, Operator(acc), 1)


def full_state_expansion(opset: LatticeOperatorSet, p: PerturbationProfile,
                         rho: Operator, t: float, dt: float,
                         tail_tol: float = TAIL_TOL) -> EvolutionPair:
    """Comparison of the two evolutions: rho_full = rho_int + Phi . K.

    K_j(t) = - integral s(tau) f_j(tau) U(t,tau) d_j(rho_int(tau)) U(t,tau)* dtau,
    evaluated by composite Simpson on nodes aligned with the propagation
    grid (two passes, so no propagator snapshots are stored).
    """
    _check_equilibrium(opset, rho)
    generator = _generator_for(opset)
    s_min = p.effective_start(tail_tol)
    d = len(opset.kernels)
    if t <= s_min:
        eye_K = [Operator(np.zeros_like(rho.entries)) for _ in range(d)]
        return EvolutionPair(t, rho, rho, eye_K, "expansion_integral", tail_tol, dt)
    # Simpson nodes every ~8 steps, even count
    nodes = max(2, math.ceil((t - s_min) / (8.0 * dt)))
    nodes += nodes % 2
    h_node = (t - s_min) / nodes
    steps_per_node = max(1, math.ceil(h_node / dt - 1e-12))
    h = h_node / steps_per_node
    step = _step_generator(opset, p, generator)
    N = opset.dim

    U_full = np.eye(N, dtype=complex)
    for i in range(nodes * steps_per_node):
        U_full = step(s_min + (i + 0.5) * h, h) @ U_full

    weights = np.ones(nodes + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= h_node / 3.0
    taus = s_min + h_node * np.arange(nodes + 1)
    sw = switch_value_array(p.eps, taus)
    fmod = modulation_values(p, taus)

    K = [np.zeros((N, N), dtype=complex) for _ in range(d)]
    U_tau = np.eye(N, dtype=complex)
    for j, tau in enumerate(taus):
        U_t_tau = U_full @ U_tau.conj().T
        rint = rho.entries * _phase(opset, p, tau)
        for k in range(d):
            grad = 1j * opset.kernels[k] * rint
            K[k] -= (weights[j] * sw[j] * fmod[k, j]) * (U_t_tau @ grad @ U_t_tau.conj().T)
        if j < nodes:
            for i in range(steps_per_node):
                U_tau = step(tau + (i + 0.5) * h, h) @ U_tau
    rho_full = U_full @ rho.entries @ U_full.conj().T
    return EvolutionPair(
        t=t,
        rho_int=interaction_state(opset, p, rho, t),
        rho_full=Operator(0.5 * (rho_full + rho_full.conj().T), hermitian=True),
        K=[Operator(0.5 * (Kk + Kk.conj().T), hermitian=True) for Kk in K],
        method="expansion_integral",
        tail_truncation=tail_tol,
        dt=h,
    )


def net_current(opset: LatticeOperatorSet, p: PerturbationProfile, J: Operator,
                rho: Operator, t: float, dt: float,
                alg: TracialAlgebra | None = None) -> float:
    """Macroscopic net current T(J_Phi(t) (rho_full - rho_int)).

    Both printed forms are evaluated; the dressing preserves the trace
    pairing exactly, so their difference is pure rounding and is asserted
    below 1e-10 before the first form is returned.
    """
    if alg is None:
        alg = TracialAlgebra(opset.dim)
    rho_full = full_state_direct(opset, p, rho, t, dt)
    rho_int = interaction_state(opset, p, rho, t)
    JPhi = dressed_observable(opset, p, J, t)
    form1 = alg.trace(JPhi.entries @ (rho_full.entries - rho_int.entries))
    form2 = (alg.trace(JPhi.entries @ rho_full.entries)
             - alg.trace(J.entries @ rho.entries))
    if abs(form1 - form2) > FORM_AGREEMENT_TOL:
        raise NotEquilibrium(
            f"net-current forms disagree by {abs(form1 - form2):.3e}")
    return float(form1.real)


def _fd_profile(p: PerturbationProfile, k: int, amp: float, d: int) -> PerturbationProfile:
    e = [0.0] * d
    e[k] = amp
    return p.with_field(e)


def conductivity_fd(opset: LatticeOperatorSet, p: PerturbationProfile,
                    J_list: list[Operator], rho: Operator, t: float,
                    dPhi: float, dt: float, tol: float = 1e-3,
                    alg: TracialAlgebra | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of the net current at zero field.

    Entry (k, j) is d/dPhi_k of T(J_j,Phi (rho_full - rho_int)) at Phi = 0,
    Richardson-extrapolated over dPhi and dPhi/2.  Returns the matrix and
    the per-entry Richardson gap; raises StepTooLarge when the two levels
    disagree beyond 10 * tol.
    """
    if alg is None:
        alg = TracialAlgebra(opset.dim)
    d = len(opset.kernels)
    nJ = len(J_list)
    sigma = np.zeros((d, nJ))
    err = np.zeros((d, nJ))

    def currents_at(field_profile: PerturbationProfile) -> np.ndarray:
        rho_full = full_state_direct(opset, field_profile, rho, t, dt)
        rho_int = interaction_state(opset, field_profile, rho, t)
        diff = rho_full.entries - rho_int.entries
        out = np.empty(nJ)
        for j, J in enumerate(J_list):
            JPhi = dressed_observable(opset, field_profile, J, t)
            out[j] = alg.trace(JPhi.entries @ diff).real
        return out

    for k in range(d):
        D1 = (currents_at(_fd_profile(p, k, +dPhi, d))
              - currents_at(_fd_profile(p, k, -dPhi, d))) / (2.0 * dPhi)
        D2 = (currents_at(_fd_profile(p, k, +dPhi / 2, d))
              - currents_at(_fd_profile(p, k, -dPhi / 2, d))) / dPhi
        gap = np.abs(D1 - D2).max()
        if gap > 10.0 * tol:
            raise StepTooLarge(
                f"Richardson levels differ by {gap:.3e} for direction {k + 1}")
        sigma[k] = (4.0 * D2 - D1) / 3.0
        err[k] = np.abs(D1 - D2) / 3.0
    return sigma, err


def conductivity_kubo(opset: LatticeOperatorSet, p: PerturbationProfile,
                      J_list: list[Operator], rho: Operator, t: float,
                      dt: float, tail_tol: float = TAIL_TOL,
                      alg: TracialAlgebra | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Kubo formula by time quadrature.

    sigma[k, j] = - integral(-inf, t) s(tau) f_k(tau) T(J_j alpha_{t-tau}(d_k rho)) dtau
    with the correlation evaluated in the eigenbasis.  Returns the matrix
    and a per-entry quadrature error estimate (coarse/fine Simpson gap).
    """
    if dt <= 0:
        raise NonPositiveStep(f"dt must be > 0, got {dt}")
    if alg is None:
        alg = TracialAlgebra(opset.dim)
    _check_equilibrium(opset, rho)
    if alg.trace_mode != "normalized":
        raise UnsupportedModulation(
            "the kubo time-quadrature route supports the normalized trace only")
    S = opset.spectral
    om = S.bohr
    d = len(opset.kernels)
    nJ = len(J_list)
    s_min = p.effective_start(tail_tol)
    if t <= s_min:
        return np.zeros((d, nJ)), np.zeros((d, nJ))

    # trace weights: T(J alpha_u(d_k rho)) = sum_mn W[m,n] e^{-iu om[m,n]}
    Jts = [S.to_eigenbasis(J.entries) for J in J_list]
    weights = {}
    for k in range(d):
        drt = S.to_eigenbasis(1j * opset.kernels[k] * rho.entries)
        for j in range(nJ):
            weights[k, j] = Jts[j].T * drt / opset.dim

    flat_om = om.ravel()
    Wmat = np.stack([weights[k, j].ravel() for k in range(d) for j in range(nJ)])

    def corr_all(u_vals: np.ndarray) -> np.ndarray:
        """corr[entry, i] for all (k, j) entries at once."""
        out = np.empty((d * nJ, len(u_vals)))
        chunk = max(1, int(2**22 // max(1, len(flat_om))))
        for lo in range(0, len(u_vals), chunk):
            u = u_vals[lo:lo + chunk, None]
            out[:, lo:lo + chunk] = (np.exp(-1j * u * flat_om[None, :]) @ Wmat.T).real.T
        return out

    def simpson_weights(a: float, b: float, n: int) -> np.ndarray:
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (b - a) / n / 3.0

    # split at the switch kink tau = 0 when it lies inside the domain
    segments = [(s_min, t)] if t <= 0 or s_min >= 0 else [(s_min, 0.0), (0.0, t)]
    omega_max = float(np.abs(om).max(initial=1.0))
    sigma = np.zeros((d, nJ))
    err = np.zeros((d, nJ))
    for a, b in segments:
        n_fine = 2 * max(64, math.ceil((b - a) * max(omega_max, 1.0 / dt) / 2.0))
        n_fine += n_fine % 4
        taus = np.linspace(a, b, n_fine + 1)
        sw = switch_value_array(p.eps, taus)
        c_all = corr_all(t - taus)
        w_fine = simpson_weights(a, b, n_fine)
        w_coarse = simpson_weights(a, b, n_fine // 2)
        for k in range(d):
            f = np.asarray(p.modulation[k].value(taus), dtype=float)
            for j in range(nJ):
                g = sw * f * c_all[k * nJ + j]
                fine = -np.sum(w_fine * g)
                coarse = -np.sum(w_coarse * g[::2])
                sigma[k, j] += fine
                err[k, j] += abs(fine - coarse)
    return sigma, err


def _resolvent_trace(S: SpectralData, Jt: np.ndarray, drt: np.ndarray,
                     eps: float, kappa: float, dim: int) -> complex:
    om = S.bohr
    return np.sum(Jt.T * (drt / (eps + 1j * kappa + 1j * om))) / dim


def conductivity_resolvent(opset: LatticeOperatorSet, p: PerturbationProfile,
                           rho: Operator, J_list: list[Operator], t: float,
                           alg: TracialAlgebra | None = None) -> np.ndarray:
    """Closed resolvent evaluation of sigma~ (no time quadrature).

    Constant modulation:   sigma~[k,j](t) = -e^{eps t} Re T(J_j (eps - L)^{-1} d_k rho)
    Pure cosine (omega0):  the two shifted resolvents (eps +- i omega0) combine
                           into a real cosine pair.
    """
    if alg is None:
        alg = TracialAlgebra(opset.dim)
    if alg.trace_mode != "normalized":
        raise ValueError("resolvent route supports the normalized trace only")
    _check_equilibrium(opset, rho)
    S = opset.spectral
    d = len(opset.kernels)
    nJ = len(J_list)
    eps = p.eps
    sigma = np.zeros((d, nJ))
    Jts = [S.to_eigenbasis(J.entries) for J in J_list]
    for k in range(d):
        mod = p.modulation[k]
        drt = S.to_eigenbasis(1j * opset.kernels[k] * rho.entries)
        for j in range(nJ):
            if isinstance(mod, Constant):
                val = -math.exp(eps * t) * _resolvent_trace(
                    S, Jts[j], drt, eps, 0.0, opset.dim).real
            elif isinstance(mod, FourierCosine) and mod.window is None:
                w0 = mod.omega0
                term = (np.exp(1j * w0 * t) * _resolvent_trace(S, Jts[j], drt, eps, +w0, opset.dim)
                        + np.exp(-1j * w0 * t) * _resolvent_trace(S, Jts[j], drt, eps, -w0, opset.dim))
                val = -math.exp(eps * t) * 0.5 * term.real
            else:
                raise UnsupportedModulation(
                    f"resolvent route needs Constant or pure FourierCosine, got {mod}")
            sigma[k, j] = val
    return sigma


@dataclass(frozen=True)
class AdiabaticResult:
    """eps -> 0 conductivity with the empirical eps sweep for convergence plots."""

    matrix: np.ndarray
    eps_grid: tuple[float, ...]
    sweep: np.ndarray  # shape (len(eps_grid), d, nJ)
    diagonal_pairing: np.ndarray
    diagonal_block_norm: np.ndarray


def adiabatic_conductivity(opset: LatticeOperatorSet, rho: Operator,
                           J_list: list[Operator],
                           Q_map: dict[int, Operator] | None = None,
                           eps_grid: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025),
                           degeneracy_tol: float | None = None,
                           obstruction_tol: float = 1e-6,
                           pairs: list[tuple[int, int]] | None = None,
                           alg: TracialAlgebra | None = None) -> AdiabaticResult:
    """Adiabatic limit sigma[k, j] = -T(Pperp(Q_{J_j}) d_k rho) without any eps sweep.

    Q_J solves J_offdiag = L_H(Q) entrywise in the eigenbasis,
    Q_mn = i J_mn / (E_m - E_n) off the degenerate pairs.  The limit of an
    entry exists only when the energy-diagonal block of J does not couple
    to the diagonal block of d_k rho: that pairing is the coefficient of
    the divergent 1/eps term, and exceeding `obstruction_tol` on a
    requested entry raises DiagonalObstruction.  On finite tori the
    longitudinal (k = j) entries of a ballistic clean model genuinely
    carry such a Drude-type divergence, so callers after the Hall response
    should request pairs=[(0, 1), (1, 0)].  Entries not requested are NaN
    in the result.  The empirical resolvent sweep over eps_grid is always
    full and finite.
    """
    if alg is None:
        alg = TracialAlgebra(opset.dim)
    if alg.trace_mode != "normalized":
        raise ValueError("adiabatic route supports the normalized trace only")
    _check_equilibrium(opset, rho)
    S = opset.spectral
    if degeneracy_tol is None:
        scale = float(np.abs(S.eigenvalues).max(initial=1.0))
        degeneracy_tol = 1e-9 * scale
    om = S.bohr
    offdiag = np.abs(om) > degeneracy_tol
    d = len(opset.kernels)
    nJ = len(J_list)

    wanted = {(k, j) for k in range(d) for j in range(nJ)} if pairs is None \
        else {(int(k), int(j)) for k, j in pairs}
    drts = [S.to_eigenbasis(1j * opset.kernels[k] * rho.entries) for k in range(d)]
    sigma = np.full((d, nJ), np.nan)
    pairing = np.zeros((d, nJ))
    block_norm = np.zeros(nJ)
    for j, J in enumerate(J_list):
        Jt = S.to_eigenbasis(J.entries)
        Jdiag = np.where(offdiag, 0.0, Jt)
        block_norm[j] = float(np.abs(Jdiag).max(initial=0.0))
        if Q_map is not None and j in Q_map:
            Qt = S.to_eigenbasis(Q_map[j].entries)
            Qt = np.where(offdiag, Qt, 0.0)
        else:
            Qt = np.zeros_like(Jt)
            Qt[offdiag] = 1j * Jt[offdiag] / om[offdiag]
        for k in range(d):
            c = np.sum(Jdiag.T * np.where(offdiag, 0.0, drts[k])) / opset.dim
            pairing[k, j] = abs(c)
            if (k, j) not in wanted:
                continue
            if abs(c) > obstruction_tol:
                raise DiagonalObstruction(
                    f"diagonal pairing {abs(c):.3e} for (k={k + 1}, j={j + 1}); "
                    "the adiabatic limit diverges")
            sigma[k, j] = (-np.sum(Qt.T * np.where(offdiag, drts[k], 0.0))
                           / opset.dim).real

    sweep = np.zeros((len(eps_grid), d, nJ))
    Jts = [S.to_eigenbasis(J.entries) for J in J_list]
    for i, eps in enumerate(eps_grid):
        for k in range(d):
            for j in range(nJ):
                sweep[i, k, j] = -_resolvent_trace(
                    S, Jts[j], drts[k], eps, 0.0, opset.dim).real
    return AdiabaticResult(sigma, tuple(eps_grid), sweep, pairing, block_norm)


def kubo_streda(alg: TracialAlgebra, S: SpectralData, P: Operator,
                opset: LatticeOperatorSet, k: int, j: int) -> float:
    """Kubo-Streda conductivity of a spectral projection.

    Evaluates both printed forms,

        -i T(P [d_k P, d_j P])   and   +i <[P, d_k P], d_j P>_L2,

    asserts they agree to 1e-10, that the value is real to 1e-10, and
    returns the real number.  Antisymmetric in (k, j).
    """
    if not P.projection:
        raise NotSpectralProjection("P must carry the projection flag")
    Pt = S.to_eigenbasis(P.entries)
    comm = np.abs(S.bohr * Pt).max(initial=0.0)
    if comm > 1e-10 * (1.0 + float(np.abs(S.eigenvalues).max(initial=0.0))):
        raise NotSpectralProjection(f"[H, P] residual {comm:.3e}")
    diag = np.diag(Pt).real
    if np.abs(diag - np.round(diag)).max(initial=0.0) > 1e-8:
        raise NotSpectralProjection("P is not a sum of eigenprojections of H")

    dPk = 1j * opset.kernels[k] * P.entries
    dPj = 1j * opset.kernels[j] * P.entries
    commutator_form = -1j * alg.trace(P.entries @ (dPk @ dPj - dPj @ dPk))
    bracket = P.entries @ dPk - dPk @ P.entries
    pairing_form = 1j * alg.trace(bracket.conj().T @ dPj)
    if abs(commutator_form - pairing_form) > FORM_AGREEMENT_TOL:
        raise NotSpectralProjection(
            f"Streda forms disagree by {abs(commutator_form - pairing_form):.3e}")
    if abs(commutator_form.imag) > FORM_AGREEMENT_TOL:
        raise NotSpectralProjection(
            f"Streda value has imaginary part {commutator_form.imag:.3e}")
    return float(commutator_form.real)


@dataclass(frozen=True)
class ZeroTemperatureRow:
    beta: float
    sigma: np.ndarray
    state_distance: float  # ||rho_beta - P||_1


@dataclass(frozen=True)
class ZeroTemperatureSweep:
    rows: list[ZeroTemperatureRow]
    projection_sigma: np.ndarray
    E_F: float


def zero_temperature_sweep(opset: LatticeOperatorSet, p: PerturbationProfile,
                           J_list: list[Operator], E_F: float,
                           beta_grid: list[float], t: float,
                           alg: TracialAlgebra | None = None) -> ZeroTemperatureSweep:
    """Conductivities along a beta grid plus the projection (beta = inf) column.

    The zero-temperature limit is taken before any adiabatic limit: each
    row is evaluated at the profile's fixed eps through the resolvent
    route, and the distance ||rho_beta - P||_1 is reported per row.
    """
    if alg is None:
        alg = TracialAlgebra(opset.dim)
    S = opset.spectral
    if np.abs(S.eigenvalues - E_F).min(initial=np.inf) < 1e-9:
        raise FermiOnEigenvalue(f"E_F = {E_F} sits on an eigenvalue")
    P = fermi_projection(S, E_F)
    rows = []
    for beta in beta_grid:
        rho_b = fermi_dirac_state(S, beta, E_F)
        sig = conductivity_resolvent(opset, p, rho_b, J_list, t, alg=alg)
        dist = schatten_norm(alg, rho_b - P, 1)
        rows.append(ZeroTemperatureRow(beta, sig, dist))
    sig_P = conductivity_resolvent(opset, p, P, J_list, t, alg=alg)
    return ZeroTemperatureSweep(rows, sig_P, E_F)


def hall_pair(opset: LatticeOperatorSet) -> list[Operator]:
    """The two current operators [J_1, J_2] of the lattice model."""
    return [current_operator(opset, 0), current_operator(opset, 1)]
