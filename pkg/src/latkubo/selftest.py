"""Named invariant checks, runnable as `latkubo selftest [--full]`.

Each check exercises one invariant of the library at desk scale and
reports PASS/FAIL with a measured residual.  The quick tier finishes in
seconds; the full tier adds the propagation-heavy and route-equivalence
oracles.  Check names are stable identifiers (tests key on them).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import dynamics, ensemble, lattice, response
from .operators import (
    Operator,
    SpectralData,
    TracialAlgebra,
    apply_function,
    commutator,
    derivation,
    heisenberg_evolve,
    identity,
    liouvillian_apply,
    liouvillian_resolvent,
    normalized_trace,
    operator_norm,
    pinching_projector,
    random_hermitian,
    random_operator,
    random_projection,
    schatten_norm,
    spectral_decompose,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


CHECKS: list[tuple[str, str, Callable[[], tuple[bool, str]]]] = []


def check(name: str, tier: str = "quick"):
    def wrap(fn):
        CHECKS.append((name, tier, fn))
        return fn
    return wrap


def _rng(tag: str) -> np.random.Generator:
    digest = hashlib.sha256(tag.encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _alg(dim: int) -> TracialAlgebra:
    return TracialAlgebra(dim)


def _desk_model(L=6, p=1, q=3, W=0.0, seed=3, displacement="minimal_image"):
    spec = lattice.ModelSpec(L, L, p, q, disorder_W=W, seed=seed,
                             displacement=displacement)
    return lattice.build_model(spec)


# --- tracial-algebra identities -------------------------------------------

@check("ncalg.spectral_reconstruction")
def _spectral_reconstruction():
    rng = _rng("spectral")
    H = random_hermitian(8, rng)
    S = spectral_decompose(H)
    V = S.eigenvectors.entries
    rec = (V * S.eigenvalues) @ V.conj().T
    r = np.abs(rec - H.entries).max()
    return r <= 1e-10 * (1 + operator_norm(H)), f"reconstruction {r:.2e}"


@check("ncalg.trace_cyclicity")
def _trace_cyclicity():
    rng = _rng("cyclic")
    alg = _alg(7)
    worst = 0.0
    for _ in range(20):
        A, B = random_operator(7, rng), random_operator(7, rng)
        worst = max(worst, abs(normalized_trace(alg, A @ B)
                               - normalized_trace(alg, B @ A)))
    return worst <= 1e-12, f"|T(AB)-T(BA)| {worst:.2e}"


def _lp_trial_failures(trials: int, slack: float = 1e-10) -> tuple[int, str]:
    """Randomized non-commutative L^p identity suite; returns failure count."""
    rng = _rng("lp-suite")
    dim = 6
    alg = _alg(dim)
    failures = 0
    worst = 0.0

    for _ in range(trials):
        A = random_operator(dim, rng)
        B = random_operator(dim, rng)
        C = random_operator(dim, rng)
        X = random_hermitian(dim, rng)
        P = random_projection(dim, 3, rng)

        checks = []
        # Hoelder / duality for conjugate pairs
        for p, q in ((1, np.inf), (2, 2), (3, 1.5)):
            tc = abs(normalized_trace(alg, A @ B))
            n1 = schatten_norm(alg, A @ B, 1)
            checks.append(tc - n1)
            checks.append(n1 - schatten_norm(alg, A, p) * schatten_norm(alg, B, q))
        # interpolation
        for th in (0.0, 0.25, 0.5, 1.0):
            p, q = 1.0, 4.0
            r = p * q / (th * p + (1 - th) * q)
            checks.append(schatten_norm(alg, A, r)
                          - schatten_norm(alg, A, p) ** (1 - th)
                          * schatten_norm(alg, A, q) ** th)
        # adjoint isometry
        for p in (1, 2, 4, np.inf):
            checks.append(abs(schatten_norm(alg, A.adjoint(), p)
                              - schatten_norm(alg, A, p)))
        # trace-commutator switch
        checks.append(abs(normalized_trace(alg, A @ commutator(B, C))
                          - normalized_trace(alg, commutator(A, B) @ C)))
        # Leibniz
        checks.append(operator_norm(derivation(X, A @ B)
                                    - (derivation(X, A) @ B + A @ derivation(X, B))))
        # integration by parts and tracelessness
        checks.append(abs(normalized_trace(alg, A @ derivation(X, B))
                          + normalized_trace(alg, derivation(X, A) @ B)))
        checks.append(abs(normalized_trace(alg, derivation(X, A))))
        # projection derivative structure
        dP = derivation(X, P)
        checks.append(operator_norm(Operator(P.entries @ dP.entries @ P.entries)))
        Q = identity(dim) - P
        checks.append(operator_norm(Operator(Q.entries @ dP.entries @ Q.entries)))
        checks.append(operator_norm(commutator(P, commutator(P, dP)) - dP))

        m = max(float(c) for c in checks)
        worst = max(worst, m)
        if m > slack:
            failures += 1
    return failures, f"worst residual/inequality slack {worst:.2e}"


@check("ncalg.lp_identity_suite")
def _lp_suite_quick():
    fails, detail = _lp_trial_failures(20)
    return fails == 0, detail


@check("ncalg.lp_identity_suite_200", tier="full")
def _lp_suite_full():
    fails, detail = _lp_trial_failures(200)
    return fails == 0, detail


@check("ncalg.liouvillian_two_routes")
def _liouvillian_two_routes():
    rng = _rng("liouville")
    H = random_hermitian(6, rng)
    S = spectral_decompose(H)
    A = random_operator(6, rng)
    r = operator_norm(liouvillian_apply(S, A) - (-1j) * commutator(H, A))
    return r <= 1e-12, f"|L(A)+i[H,A]| {r:.2e}"


@check("ncalg.resolvent_laplace_identity")
def _resolvent_laplace():
    """Sign canary: eigenbasis resolvent vs adaptive quadrature of the
    Laplace transform of the Heisenberg evolution."""
    rng = _rng("laplace")
    H = random_hermitian(4, rng)
    S = spectral_decompose(H)
    A = random_operator(4, rng)
    eps = 0.3
    R = liouvillian_resolvent(S, eps, 0.0, A).entries
    worst = 0.0
    T = 40.0 / eps  # truncation tail below 1e-17 of the integrand scale
    for m in range(4):
        for n in range(4):
            def integrand(tau, part):
                val = heisenberg_evolve(S, tau, A).entries[m, n] * math.exp(-eps * tau)
                return val.real if part == 0 else val.imag
            re = quad(integrand, 0, T, args=(0,), limit=2000,
                      epsabs=1e-11, epsrel=1e-11)[0]
            im = quad(integrand, 0, T, args=(1,), limit=2000,
                      epsabs=1e-11, epsrel=1e-11)[0]
            worst = max(worst, abs(complex(re, im) - R[m, n]))
    return worst <= 1e-8, f"max entry deviation {worst:.2e}"


@check("ncalg.pinching_resolvent_sweep")
def _pinching_sweep():
    rng = _rng("pinch")
    H = random_hermitian(6, rng)
    S = spectral_decompose(H)
    A = random_operator(6, rng)
    _, Aperp = pinching_projector(S, A)
    alg = _alg(6)
    prev = np.inf
    ok = True
    for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
        LA = liouvillian_apply(S, liouvillian_resolvent(S, eps, 0.0, A))
        # L (L - eps)^{-1} = -L (eps - L)^{-1}
        dev = schatten_norm(alg, (-1.0) * LA - Aperp, 2)
        ok = ok and dev < prev + 1e-14
        prev = dev
    return ok and prev <= 1e-4, f"final sweep deviation {prev:.2e}"


@check("ncalg.evolution_isometry")
def _evolution_isometry():
    rng = _rng("isometry")
    H = random_hermitian(6, rng)
    S = spectral_decompose(H)
    A = random_operator(6, rng)
    alg = _alg(6)
    worst = 0.0
    At = heisenberg_evolve(S, 1.7, A)
    for p in (1, 2, np.inf):
        worst = max(worst, abs(schatten_norm(alg, At, p) - schatten_norm(alg, A, p)))
    grp = operator_norm(heisenberg_evolve(S, 0.9, heisenberg_evolve(S, 0.8, A))
                        - At)
    return worst <= 1e-10 and grp <= 1e-10, f"isometry {worst:.2e}, group law {grp:.2e}"


@check("ncalg.generator_consistency")
def _generator_consistency():
    rng = _rng("generator")
    H = random_hermitian(6, rng)
    S = spectral_decompose(H)
    A = random_operator(6, rng)
    alg = _alg(6)
    LA = liouvillian_apply(S, A)
    # fit C at a coarse step, then check C * h bounds finer steps
    def defect(h):
        return schatten_norm(alg, (1.0 / h) * (heisenberg_evolve(S, h, A) - A) - LA, 2)
    C = defect(1e-2) / 1e-2
    ok = all(defect(h) <= 2.0 * C * h for h in (1e-3, 1e-4))
    return ok, f"fitted C {C:.3f}"


# --- lattice ----------------------------------------------------------------

@check("lattice.magnetic_commutation")
def _magnetic_commutation():
    opset = _desk_model()
    worst = max(operator_norm(commutator(opset.H, S)) for S in opset.S)
    return worst <= 1e-11, f"max |[H, S_a]| {worst:.2e}"


@check("lattice.cocycle_twist")
def _cocycle():
    opset = _desk_model()
    th = opset.spec.theta
    S1, S2 = opset.S[0].entries, opset.S[1].entries
    r = np.abs(S1 @ S2 - np.exp(2j * th) * (S2 @ S1)).max()
    return r <= 1e-11, f"|S1 S2 - e^(2i theta) S2 S1| {r:.2e}"


@check("lattice.spectral_symmetry")
def _spectral_symmetry():
    opset = _desk_model()
    E = opset.spectral.eigenvalues
    r = np.abs(np.sort(E) + np.sort(-E)[::-1]).max()
    return r <= 1e-11, f"E -> -E asymmetry {r:.2e}"


@check("lattice.bloch_spectrum_match")
def _bloch_match():
    spec = lattice.ModelSpec(6, 6, 1, 3)
    dense = lattice.build_model(spec).spectral.eigenvalues
    bloch = lattice.bloch_reduce(spec).torus_eigenvalues()
    r = np.abs(dense - bloch).max()
    return r <= 1e-9, f"dense vs momentum spectrum {r:.2e}"


@check("lattice.current_hand_commutator")
def _current_hand():
    spec = lattice.ModelSpec(6, 6, 1, 3)
    opset = lattice.build_model(spec)
    T1, _ = lattice._hop_matrices(spec)
    J1 = lattice.current_operator(opset, 0)
    r = np.abs(J1.entries - 1j * (T1.conj().T - T1)).max()
    return r <= 1e-12, f"|J1 - i(T1* - T1)| {r:.2e}"


@check("lattice.fermi_gap_fraction")
def _fermi_fraction():
    opset = _desk_model(L=6)
    P = lattice.fermi_projection(opset.spectral, -1.36)
    t = normalized_trace(_alg(36), P)
    return abs(t - 1 / 3) <= 1e-10, f"T(P) = {t.real:.12f}"


@check("lattice.covariant_kernel_commutes")
def _covariant_kernel():
    spec = lattice.ModelSpec(6, 6, 1, 3)
    A = lattice.covariant_from_kernel(
        spec, {(1, 0): 1.0, (-1, 0): 1.0, (0, 1): 1.0, (0, -1): 1.0})
    opset = lattice.build_model(spec)
    same = np.abs(A.entries - opset.H.entries).max()
    worst = max(np.abs(A.entries @ S.entries - S.entries @ A.entries).max()
                for S in opset.S)
    return same <= 1e-12 and worst <= 1e-11, \
        f"vs H {same:.2e}, translation residual {worst:.2e}"


@check("lattice.disorder_determinism")
def _disorder_determinism():
    spec = lattice.ModelSpec(6, 6, 1, 3, disorder_W=0.5, seed=11)
    a = lattice.disorder_values(spec, 4)
    b = lattice.disorder_values(spec, 4)
    inside = np.all(np.abs(a) <= 0.25)
    return bool(np.array_equal(a, b) and inside), "bit-exact regeneration"


@check("lattice.chern_first_band", tier="full")
def _chern_first_band():
    bloch = lattice.bloch_reduce(lattice.ModelSpec(12, 12, 1, 3))
    c1 = lattice.chern_number(bloch, 1)
    c2 = lattice.chern_number(bloch, 2)
    c3 = lattice.chern_number(bloch, 3)
    return (c1, c2, c3) == (1, -1, 0), f"gap integers {(c1, c2, c3)}"


@check("lattice.sobolev_stability", tier="full")
def _sobolev():
    vals = {}
    for L in (12, 24):
        opset = _desk_model(L=L)
        P = lattice.fermi_projection(opset.spectral, -1.36)
        dP = opset.spatial_derivative(P, 0)
        alg = _alg(opset.dim)
        vals[L] = (schatten_norm(alg, dP, 1), schatten_norm(alg, dP, 2))
    drift = max(abs(vals[24][i] - vals[12][i]) / vals[24][i] for i in range(2))
    finite = all(np.isfinite(v) for pair in vals.values() for v in pair)
    return finite and drift < 0.03, \
        f"(|dP|_1, |dP|_2) at L=24: ({vals[24][0]:.4f}, {vals[24][1]:.4f}), drift {drift:.1%}"


# --- dynamics ---------------------------------------------------------------

def _profile(eps=0.5, field=(0.05, 0.0), mod=None):
    return dynamics.PerturbationProfile(eps, field, mod or (dynamics.Constant(),) * 2)


@check("dynamics.switch_and_phi_values")
def _switch_phi():
    ok = (dynamics.switch_value(1.0, 0.0) == 1.0
          and dynamics.switch_value(1.0, 2.0) == 1.0
          and abs(dynamics.switch_value(0.5, -2.0) - math.exp(-1.0)) < 1e-15)
    p = _profile(eps=1.0, field=(0.1, 0.0))
    ok = ok and abs(dynamics.phi_profile(p, 0.0)[0] - 0.1) < 1e-14
    ok = ok and abs(dynamics.phi_profile(p, 3.0)[0] - 0.4) < 1e-14
    bump = dynamics.CompactBump(-2.0, -1.0)
    pb = dynamics.PerturbationProfile(1.0, (0.3, 0.0), (bump, bump))
    ok = ok and dynamics.phi_profile(pb, -2.5)[0] == 0.0
    return ok, "closed forms and supports"


@check("dynamics.gauge_group_law")
def _gauge_group_law():
    opset = _desk_model()
    p = _profile(field=(0.3, 0.7))
    t = 0.8
    phi = dynamics.phi_profile(p, t)
    x1, x2 = opset.spec.coords
    g12 = np.exp(1j * phi[0] * x1) * np.exp(1j * phi[1] * x2)
    g21 = np.exp(1j * phi[1] * x2) * np.exp(1j * phi[0] * x1)
    G = dynamics.gauge_unitary(opset, p, t).entries
    r = max(np.abs(np.diag(G) - g12).max(), np.abs(np.diag(G) - g21).max())
    return r <= 1e-12, f"factor-order deviation {r:.2e}"


@check("dynamics.isospectrality")
def _isospectrality():
    opset = _desk_model()
    p = _profile(eps=0.2, field=(0.3, 0.0))
    E = np.sort(opset.spectral.eigenvalues)
    worst = 0.0
    for t in (-1.0, 0.0, 1.0, 2.5):
        Ht = dynamics.perturbed_hamiltonian(opset, p, t)
        worst = max(worst, np.abs(np.sort(np.linalg.eigvalsh(Ht.entries)) - E).max())
    return worst <= 1e-9, f"eigenvalue drift {worst:.2e}"


@check("dynamics.bch_first_order")
def _bch_first_order():
    opset = _desk_model()
    p = _profile(field=(0.04, 0.02))
    t = 0.5
    phi = dynamics.phi_profile(p, t)
    W1 = dynamics.bch_additive_perturbation(opset, p, t, 1)
    expected = sum(
        -phi[k] * dynamics.current_tensor(opset, tuple(int(i == k) for i in range(2))).entries
        for k in range(2))
    r = np.abs(W1.entries - expected).max()
    return r <= 1e-12, f"first-order term deviation {r:.2e}"


@check("dynamics.bch_remainder_decay", tier="full")
def _bch_decay():
    opset = _desk_model()
    p = _profile(eps=0.5, field=(0.03, 0.02))
    t = 1.0
    phi = dynamics.phi_profile(p, t)
    # raw positions reach across the whole torus, so the effective series
    # parameter is |Phi^eps|_1 times the largest coordinate spread
    S = float(np.abs(phi).sum()) * (opset.spec.L1 - 1)
    HPhi = dynamics.perturbed_hamiltonian(opset, p, t).entries
    H = opset.H.entries
    ok = True
    details = []
    for N in range(1, 9):
        WN = dynamics.bch_additive_perturbation(opset, p, t, N).entries
        r = operator_norm(Operator(H + WN - HPhi))
        bound = 5.0 * operator_norm(opset.H) * S ** (N + 1) / math.factorial(N + 1)
        details.append(r)
        ok = ok and r <= bound
    shrinking = all(details[i + 1] < details[i] for i in range(7))
    return ok and shrinking and details[-1] <= 1e-5, \
        f"remainders {['%.1e' % d for d in details]}"


@check("dynamics.propagator_free_field")
def _propagator_free():
    opset = _desk_model()
    p = _profile(field=(0.0, 0.0))
    res = dynamics.propagate(opset, p, 0.0, 1.3, dt=0.05)
    r = operator_norm(Operator(res.U.entries - dynamics.free_propagator(opset, 1.3)))
    return r <= 1e-9, f"|U - e^(-itH)| {r:.2e} (midpoint exact for constant H)"


@check("dynamics.propagator_unitarity")
def _propagator_unitarity():
    opset = _desk_model()
    p = _profile(eps=0.3, field=(0.2, 0.1))
    res = dynamics.propagate(opset, p, -1.0, 1.0, dt=1e-2)
    r = np.abs(res.U.entries @ res.U.entries.conj().T - np.eye(opset.dim)).max()
    adj = dynamics.propagate(opset, p, 1.0, -1.0, dt=1e-2)
    radj = operator_norm(res.U.adjoint() - adj.U)
    return r <= 1e-9 and radj <= 1e-12, f"unitarity {r:.2e}, adjoint {radj:.2e}"


@check("dynamics.propagator_cocycle", tier="full")
def _propagator_cocycle():
    spec = lattice.ModelSpec(12, 12, 1, 3, displacement="open_positions")
    opset = lattice.build_model(spec)
    p = _profile(eps=0.5, field=(0.1, 0.0))
    res = dynamics.propagate(opset, p, 0.0, 1.0, dt=1e-3)
    return res.cocycle_residual <= 1e-6, f"cocycle residual {res.cocycle_residual:.2e}"


@check("dynamics.richardson_halving", tier="full")
def _richardson():
    opset = _desk_model()
    p = _profile(eps=0.4, field=(0.3, 0.2))
    U1 = dynamics.propagate(opset, p, 0.0, 1.0, dt=4e-2, check_cocycle=False).U
    U2 = dynamics.propagate(opset, p, 0.0, 1.0, dt=2e-2, check_cocycle=False).U
    U3 = dynamics.propagate(opset, p, 0.0, 1.0, dt=1e-2, check_cocycle=False).U
    r12 = operator_norm(U1 - U2)
    r23 = operator_norm(U2 - U3)
    ratio = r12 / r23
    return 3.0 <= ratio <= 5.0, f"halving ratio {ratio:.2f} (expect ~4)"


@check("dynamics.duhamel_residual", tier="full")
def _duhamel():
    spec = lattice.ModelSpec(8, 8, 1, 4, displacement="open_positions")
    opset = lattice.build_model(spec)
    p = _profile(eps=0.5, field=(0.05, 0.0))
    r0 = dynamics.duhamel_residual(opset, _profile(field=(0.0, 0.0)), 1.0, 0.0, 1e-2)
    r1 = dynamics.duhamel_residual(opset, p, 1.0, 0.0, 1e-3)
    r2 = dynamics.duhamel_residual(opset, p, 1.0, 0.0, 5e-4)
    order_ok = r1 / r2 >= 3.0
    return r0 <= 1e-12 and r1 <= 1e-5 and order_ok, \
        f"zero-field {r0:.1e}, dt=1e-3 {r1:.1e}, halving ratio {r1 / r2:.2f}"


@check("dynamics.interaction_derivative", tier="full")
def _interaction_derivative():
    opset = _desk_model(displacement="open_positions")
    p = _profile(eps=0.7, field=(0.3, 0.2))
    rho = apply_function(opset.spectral, lambda x: np.exp(-x**2))
    alg = _alg(opset.dim)
    t = 0.4
    f = dynamics.modulation_values(p, np.array([t]))[:, 0]
    s = dynamics.switch_value(p.eps, t)
    gamma_t = response.interaction_state(opset, p, rho, t)
    expected = sum(s * p.field[k] * f[k] * opset.spatial_derivative(gamma_t, k).entries
                   for k in range(2))
    res = []
    for h in (1e-4, 5e-5):
        diff = (response.interaction_state(opset, p, rho, t + h).entries
                - gamma_t.entries) / h
        res.append(schatten_norm(alg, Operator(diff - expected), 2))
    return res[0] <= 1e-3 and res[1] <= 0.6 * res[0], \
        f"defects {res[0]:.1e} -> {res[1]:.1e} (O(h))"


@check("dynamics.strong_phi_continuity", tier="full")
def _phi_continuity():
    opset = _desk_model(displacement="open_positions")
    rho = apply_function(opset.spectral, lambda x: 1.0 / (1.0 + np.exp(2 * x)))
    alg = _alg(opset.dim)
    t, s = 0.5, -1.5
    base = heisenberg_evolve(opset.spectral, t - s, rho)
    prev = np.inf
    ok = True
    for mag in (0.2, 0.1, 0.05, 0.025):
        p = _profile(eps=0.4, field=(mag, 0.0))
        U = dynamics.propagate(opset, p, s, t, dt=5e-3, check_cocycle=False).U
        dev = schatten_norm(alg, Operator(
            U.entries @ rho.entries @ U.entries.conj().T - base.entries), 2)
        ok = ok and dev < prev
        prev = dev
    return ok, f"deviation at smallest field {prev:.2e}"


# --- response ---------------------------------------------------------------

@check("response.equilibrium_no_current")
def _no_current():
    opset = _desk_model(displacement="open_positions")
    rng = _rng("nogo")
    alg = _alg(opset.dim)
    coef = rng.standard_normal(4)
    f = apply_function(opset.spectral,
                       lambda x: coef[0] + coef[1] * x + coef[2] * x**2 / 10 + coef[3] * np.cos(x))
    worst = max(abs(normalized_trace(alg, lattice.current_operator(opset, k) @ f))
                for k in range(2))
    return worst <= 1e-11, f"|T(J f(H))| {worst:.2e}"


@check("response.state_identity_H_partial")
def _state_identity():
    opset = _desk_model(displacement="open_positions")
    rho = apply_function(opset.spectral, lambda x: 1.0 / (1.0 + np.exp(1.3 * (x + 1.0))))
    worst = 0.0
    for k in range(2):
        lhs = opset.H.entries @ opset.spatial_derivative(rho, k).entries
        Jk = lattice.current_operator(opset, k)
        rhs = (Jk.entries @ rho.entries
               + opset.spatial_derivative(Operator(opset.H.entries @ rho.entries), k).entries)
        worst = max(worst, np.abs(lhs - rhs).max())
    return worst <= 1e-11, f"identity residual {worst:.2e}"


@check("response.generalized_commutator_equilibrium")
def _gen_comm_equilibrium():
    opset = _desk_model(displacement="open_positions")
    p = _profile(eps=0.5, field=(0.2, 0.1))
    rho = apply_function(opset.spectral, lambda x: 1.0 / (1.0 + np.exp(2 * x)))
    t = 0.7
    Ht = dynamics.perturbed_hamiltonian(opset, p, t).entries
    rint = response.interaction_state(opset, p, rho, t).entries
    r = np.abs(Ht @ rint - rint @ Ht).max()
    return r <= 1e-10, f"[H_Phi(t), rho_int(t)] {r:.2e}"


@check("response.net_current_dual_form")
def _net_current_forms():
    opset = _desk_model(L=6, displacement="open_positions")
    p = _profile(eps=0.5, field=(0.05, 0.0))
    rho = lattice.fermi_projection(opset.spectral, -1.36)
    J = response.hall_pair(opset)[0]
    val = response.net_current(opset, p, J, rho, 0.5, dt=5e-3)
    zero = response.net_current(opset, p.with_field((0.0, 0.0)), J, rho, 0.5, dt=5e-3)
    return abs(zero) <= 1e-12 and np.isfinite(val), \
        f"net current {val:.3e}, zero-field {zero:.1e}"


@check("response.streda_antisymmetry")
def _streda_antisym():
    opset = _desk_model(L=6)
    S = opset.spectral
    P = lattice.fermi_projection(S, -1.36)
    alg = _alg(opset.dim)
    s12 = response.kubo_streda(alg, S, P, opset, 0, 1)
    s21 = response.kubo_streda(alg, S, P, opset, 1, 0)
    s11 = response.kubo_streda(alg, S, P, opset, 0, 0)
    return abs(s12 + s21) <= 1e-12 and abs(s11) <= 1e-14, \
        f"sigma12 {s12:.6f}, antisymmetry {abs(s12 + s21):.1e}"


@check("response.streda_basis_independence", tier="full")
def _streda_basis():
    opset = _desk_model(L=6)
    S = opset.spectral
    P = lattice.fermi_projection(S, -1.36)
    alg = _alg(opset.dim)
    base = response.kubo_streda(alg, S, P, opset, 0, 1)
    # re-randomize degenerate clusters of the eigenbasis
    rng = _rng("cluster")
    E, V = S.eigenvalues, S.eigenvectors.entries.copy()
    i = 0
    while i < len(E):
        jlim = i + 1
        while jlim < len(E) and E[jlim] - E[i] < 1e-9:
            jlim += 1
        if jlim - i > 1:
            block = rng.standard_normal((jlim - i, jlim - i)) \
                + 1j * rng.standard_normal((jlim - i, jlim - i))
            Q, _ = np.linalg.qr(block)
            V[:, i:jlim] = V[:, i:jlim] @ Q
        i = jlim
    S2 = SpectralData(E, Operator(V, unitary=True), opset.H)
    redo = response.kubo_streda(alg, S2, P, opset, 0, 1)
    return abs(base - redo) <= 1e-10, f"basis drift {abs(base - redo):.2e}"


@check("response.route_kubo_resolvent", tier="full")
def _route_kubo_resolvent():
    spec = lattice.ModelSpec(8, 8, 1, 4, displacement="open_positions")
    opset = lattice.build_model(spec)
    S = opset.spectral
    gaps = np.diff(S.eigenvalues)
    EF = float(S.eigenvalues[15] + gaps[15] / 2)
    rho = lattice.fermi_projection(S, EF)
    p = _profile(eps=0.5)
    J = response.hall_pair(opset)
    kubo, _ = response.conductivity_kubo(opset, p, J, rho, 0.0, dt=1e-3,
                                         tail_tol=1e-12)
    resv = response.conductivity_resolvent(opset, p, rho, J, 0.0)
    dev = np.abs(kubo - resv).max()
    return dev <= 1e-8, f"max route gap {dev:.2e}"


@check("response.route_fd_kubo", tier="full")
def _route_fd_kubo():
    spec = lattice.ModelSpec(6, 6, 1, 3, displacement="open_positions")
    opset = lattice.build_model(spec)
    S = opset.spectral
    rho = lattice.fermi_projection(S, -1.36)
    p = _profile(eps=0.5)
    J = response.hall_pair(opset)
    fd, _ = response.conductivity_fd(opset, p, J, rho, 0.0, dPhi=0.02, dt=5e-3)
    kubo, _ = response.conductivity_kubo(opset, p, J, rho, 0.0, dt=2e-3)
    dev = np.abs(fd - kubo).max()
    tol = 1e-3 * max(1.0, np.abs(kubo).max())
    return dev <= tol, f"max |fd - kubo| {dev:.2e} (tol {tol:.1e})"


@check("response.adiabatic_remainder", tier="full")
def _adiabatic_remainder():
    opset = _desk_model(L=12)
    S = opset.spectral
    rho = lattice.fermi_projection(S, -1.36)
    J = response.hall_pair(opset)
    result = response.adiabatic_conductivity(
        opset, rho, J, eps_grid=(0.2, 0.1, 0.05, 0.025),
        pairs=[(0, 1), (1, 0)])
    deltas = [abs(result.sweep[i, 0, 1] - result.matrix[0, 1])
              for i in range(len(result.eps_grid))]
    decreasing = all(deltas[i + 1] < deltas[i] for i in range(len(deltas) - 1))
    alg = _alg(opset.dim)
    streda = response.kubo_streda(alg, S, lattice.fermi_projection(S, -1.36),
                                  opset, 0, 1)
    close = abs(result.matrix[0, 1] - streda) <= 1e-2
    return decreasing and close, \
        f"remainders {['%.1e' % d for d in deltas]}, vs streda {abs(result.matrix[0, 1] - streda):.2e}"


@check("response.zero_temperature_ordering", tier="full")
def _zero_temperature():
    opset = _desk_model(L=6)
    p = _profile(eps=0.05)
    J = response.hall_pair(opset)
    gap = 2.0 - 0.7320508075688772
    sweep = response.zero_temperature_sweep(
        opset, p, J, -1.36, [10.0, 40.0, 400.0 / gap], 0.0)
    last = np.abs(sweep.rows[-1].sigma - sweep.projection_sigma).max()
    dists = [r.state_distance for r in sweep.rows]
    monotone = all(dists[i + 1] < dists[i] for i in range(len(dists) - 1))
    return last <= 1e-4 and monotone, \
        f"|sigma(beta_max) - sigma(P)| {last:.1e}, state distances {['%.1e' % d for d in dists]}"


# --- ensemble ---------------------------------------------------------------

@check("ensemble.covariance_exactness")
def _covariance():
    spec = lattice.ModelSpec(6, 6, 1, 3, disorder_W=1.0, seed=5)
    real = ensemble.sample_disorder(spec, 0)
    worst = max(ensemble.covariance_check(spec, real, shift)
                for shift in ((0, 0), (1, 0), (0, 1), (3, 5)))
    return worst <= 1e-11, f"max conjugation residual {worst:.2e}"


@check("ensemble.trace_box_identity")
def _trace_box():
    opset = _desk_model(L=6)
    rows = ensemble.trace_per_volume_estimate(opset, identity(36), [(2, 2), (3, 3)])
    worst = max(abs(r.value - 1.0) for r in rows)
    full = ensemble.trace_per_volume_estimate(opset, opset.H, [(6, 6)])[0].value
    exact = normalized_trace(_alg(36), opset.H).real
    return worst <= 1e-14 and abs(full - exact) <= 1e-14, \
        f"identity boxes {worst:.1e}, full box vs T {abs(full - exact):.1e}"


@check("ensemble.disorder_mean_clt", tier="full")
def _disorder_clt():
    spec = lattice.ModelSpec(100, 100, 0, 1, disorder_W=1.0, seed=17)
    v = lattice.disorder_values(spec, 0)
    bound = 3.0 * spec.disorder_W / math.sqrt(12.0 * v.size)
    return abs(v.mean()) <= bound, f"|mean| {abs(v.mean()):.2e} <= {bound:.2e}"


@check("ensemble.ergodic_consistency", tier="full")
def _ergodic():
    spec = lattice.ModelSpec(12, 12, 1, 3, disorder_W=0.4, seed=23)

    def site_density(real: ensemble.DisorderRealization) -> float:
        opset = lattice.build_model(spec, disorder=real.values)
        P = lattice.fermi_projection(opset.spectral, -1.36)
        return float(P.entries[0, 0].real)

    stats = ensemble.ensemble_average(spec, site_density, 8)
    opset = lattice.build_model(spec, disorder=ensemble.sample_disorder(spec, 0).values)
    P = lattice.fermi_projection(opset.spectral, -1.36)
    volume_mean = float(np.trace(P.entries).real) / spec.dim
    gap = abs(stats.mean - volume_mean)
    return gap <= max(3.0 * stats.stderr, 0.02), \
        f"ensemble {stats.mean:.5f} +- {stats.stderr:.5f} vs volume {volume_mean:.5f}"


# --- runner ----------------------------------------------------------------

def run_selftest(level: str = "quick") -> list[CheckResult]:
    results = []
    for name, tier, fn in CHECKS:
        if level == "quick" and tier != "quick":
            continue
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.detail})")
    failed = sum(1 for r in results if not r.passed)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)
