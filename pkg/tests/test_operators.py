import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from latkubo.errors import DimMismatch, InvalidP, NonPositiveEpsilon, NotHermitian
from latkubo.operators import (
    Operator,
    TracialAlgebra,
    apply_function,
    commutator,
    derivation,
    fermi_dirac,
    heisenberg_evolve,
    identity,
    liouvillian_apply,
    liouvillian_resolvent,
    normalized_trace,
    operator_norm,
    pinching_projector,
    random_hermitian,
    random_operator,
    spectral_decompose,
)

RNG = np.random.default_rng(42)
ALG6 = TracialAlgebra(6)


def op(entries, **kw):
    return Operator(np.asarray(entries, dtype=complex), **kw)


class TestSpectralDecompose:
    def test_already_diagonal(self):
        S = spectral_decompose(op(np.diag([0.0, 1.0]), hermitian=True))
        assert np.allclose(S.eigenvalues, [0.0, 1.0])
        assert np.allclose(np.abs(S.eigenvectors.entries), np.eye(2))

    def test_pauli_x(self):
        S = spectral_decompose(op([[0, 1], [1, 0]], hermitian=True))
        assert np.allclose(S.eigenvalues, [-1.0, 1.0])

    def test_reconstruction_random(self):
        H = random_hermitian(8, RNG)
        S = spectral_decompose(H)
        V = S.eigenvectors.entries
        rec = (V * S.eigenvalues) @ V.conj().T
        assert np.abs(rec - H.entries).max() <= 1e-10 * (1 + operator_norm(H))

    def test_requires_hermitian_flag(self):
        with pytest.raises(NotHermitian):
            spectral_decompose(op(np.diag([1.0, 2.0])))

    def test_flag_with_bad_matrix(self):
        with pytest.raises(NotHermitian):
            op([[0, 1], [0, 0]], hermitian=True)


class TestApplyFunction:
    def test_identity_function(self):
        H = random_hermitian(5, RNG)
        S = spectral_decompose(H)
        back = apply_function(S, lambda x: x)
        assert operator_norm(back - H) <= 1e-10

    def test_step_function(self):
        S = spectral_decompose(op(np.diag([0.0, 1.0]), hermitian=True))
        P = apply_function(S, lambda x: (x <= 0.5).astype(float))
        assert np.allclose(P.entries, np.diag([1.0, 0.0]))

    def test_fermi_dirac_closed_form(self):
        S = spectral_decompose(op(np.diag([0.0, 1.0]), hermitian=True))
        rho = apply_function(S, fermi_dirac(2.0, 0.5))
        expected = np.diag([1 / (1 + np.exp(-1.0)), 1 / (1 + np.exp(1.0))])
        assert np.abs(rho.entries - expected).max() <= 1e-14


class TestTrace:
    def test_identity(self):
        assert normalized_trace(TracialAlgebra(5), identity(5)) == 1.0

    def test_rank_one(self):
        assert normalized_trace(TracialAlgebra(3), op(np.diag([1, 0, 0]))) \
            == pytest.approx(1 / 3)

    def test_cyclicity(self):
        for _ in range(10):
            A, B = random_operator(6, RNG), random_operator(6, RNG)
            d = abs(normalized_trace(ALG6, A @ B) - normalized_trace(ALG6, B @ A))
            assert d <= 1e-12

    def test_site_mode_matches_diagonal(self):
        A = random_operator(4, RNG)
        alg = TracialAlgebra(4, trace_mode="site", reference_site=2)
        assert normalized_trace(alg, A) == A.entries[2, 2]

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            normalized_trace(TracialAlgebra(3), identity(4))


class TestSchattenNorm:
    def test_identity_p2(self):
        from latkubo.operators import schatten_norm
        assert schatten_norm(TracialAlgebra(4), identity(4), 2) == pytest.approx(1.0)

    def test_diag_p1(self):
        from latkubo.operators import schatten_norm
        val = schatten_norm(TracialAlgebra(2), op(np.diag([3.0, 0.0])), 1)
        assert val == pytest.approx(1.5)

    def test_hoelder_two_two(self):
        from latkubo.operators import schatten_norm
        for _ in range(10):
            A, B = random_operator(6, RNG), random_operator(6, RNG)
            lhs = schatten_norm(ALG6, A @ B, 1)
            rhs = schatten_norm(ALG6, A, 2) * schatten_norm(ALG6, B, 2)
            assert lhs <= rhs + 1e-12

    def test_invalid_p(self):
        from latkubo.operators import schatten_norm
        with pytest.raises(InvalidP):
            schatten_norm(ALG6, identity(6), 0.5)

    @given(st.integers(2, 6), st.sampled_from([1.0, 1.5, 2.0, 4.0]))
    @settings(max_examples=25, deadline=None)
    def test_adjoint_isometry_property(self, dim, p):
        rng = np.random.default_rng(dim * 100 + int(2 * p))
        A = random_operator(dim, rng)
        alg = TracialAlgebra(dim)
        from latkubo.operators import schatten_norm
        assert schatten_norm(alg, A.adjoint(), p) == pytest.approx(
            schatten_norm(alg, A, p), abs=1e-12)


class TestCommutatorDerivation:
    def test_self_commutator(self):
        A = random_operator(5, RNG)
        assert operator_norm(commutator(A, A)) <= 1e-13

    def test_diagonal_scaling(self):
        X = op(np.diag([2.0, 5.0]))
        E12 = op([[0, 1], [0, 0]])
        assert np.allclose(commutator(X, E12).entries, (2 - 5) * E12.entries)

    def test_antisymmetry(self):
        A, B = random_operator(6, RNG), random_operator(6, RNG)
        assert operator_norm(commutator(A, B) + commutator(B, A)) <= 1e-13

    def test_derivation_commuting(self):
        X = random_hermitian(5, RNG)
        f = apply_function(spectral_decompose(X), np.cos)
        assert operator_norm(derivation(X, f)) <= 1e-12

    def test_derivation_phase_rule(self):
        X = op(np.diag([0.0, 1.0]), hermitian=True)
        A = op([[0, 1], [0, 0]])
        assert np.allclose(derivation(X, A).entries, -1j * A.entries)

    def test_derivation_traceless(self):
        X, A = random_hermitian(6, RNG), random_operator(6, RNG)
        assert abs(normalized_trace(ALG6, derivation(X, A))) <= 1e-13


class TestLiouvillian:
    def setup_method(self):
        self.H = random_hermitian(6, RNG)
        self.S = spectral_decompose(self.H)

    def test_kernel_contains_functions_of_H(self):
        f = apply_function(self.S, np.tanh)
        assert operator_norm(liouvillian_apply(self.S, f)) <= 1e-12

    def test_two_level_phase(self):
        w = 1.3
        S = spectral_decompose(op(np.diag([0.0, w]), hermitian=True))
        A = op([[0, 1], [0, 0]])
        assert np.allclose(liouvillian_apply(S, A).entries, 1j * w * A.entries)

    def test_matches_commutator(self):
        A = random_operator(6, RNG)
        direct = -1j * commutator(self.H, A).entries
        assert np.abs(liouvillian_apply(self.S, A).entries - direct).max() <= 1e-12

    def test_resolvent_kernel_element(self):
        f = apply_function(self.S, np.exp)
        R = liouvillian_resolvent(self.S, 0.7, 0.0, f)
        assert operator_norm(R - (1 / 0.7) * f) <= 1e-11

    def test_resolvent_two_level(self):
        w = 2.1
        S = spectral_decompose(op(np.diag([0.0, w]), hermitian=True))
        A = op([[0, 1], [0, 0]])
        R = liouvillian_resolvent(S, 0.4, 0.0, A)
        assert np.allclose(R.entries, A.entries / (0.4 - 1j * w))

    def test_resolvent_is_laplace_transform(self):
        """Independent quadrature oracle for the resolvent orientation."""
        H = random_hermitian(4, np.random.default_rng(7))
        S = spectral_decompose(H)
        A = random_operator(4, np.random.default_rng(8))
        eps = 0.3
        R = liouvillian_resolvent(S, eps, 0.0, A).entries
        T = 40.0 / eps  # truncation tail below 1e-17 of the integrand scale
        for m in range(4):
            for n in range(4):
                def f(tau, part):
                    v = heisenberg_evolve(S, tau, A).entries[m, n] * np.exp(-eps * tau)
                    return v.real if part == 0 else v.imag
                val = complex(
                    quad(f, 0, T, args=(0,), limit=2000, epsabs=1e-11, epsrel=1e-11)[0],
                    quad(f, 0, T, args=(1,), limit=2000, epsabs=1e-11, epsrel=1e-11)[0])
                assert abs(val - R[m, n]) <= 1e-8

    def test_nonpositive_eps(self):
        with pytest.raises(NonPositiveEpsilon):
            liouvillian_resolvent(self.S, 0.0, 0.0, identity(6))


class TestHeisenbergEvolve:
    def setup_method(self):
        self.S = spectral_decompose(random_hermitian(6, RNG))

    def test_time_zero(self):
        A = random_operator(6, RNG)
        assert operator_norm(heisenberg_evolve(self.S, 0.0, A) - A) <= 1e-14

    def test_equilibrium_invariance(self):
        f = apply_function(self.S, np.sin)
        assert operator_norm(heisenberg_evolve(self.S, 2.7, f) - f) <= 1e-12

    def test_isometry(self):
        from latkubo.operators import schatten_norm
        A = random_operator(6, RNG)
        At = heisenberg_evolve(self.S, 1.7, A)
        for p in (1, 2, np.inf):
            assert schatten_norm(ALG6, At, p) == pytest.approx(
                schatten_norm(ALG6, A, p), abs=1e-11)


class TestPinching:
    def test_nondegenerate_diagonal(self):
        S = spectral_decompose(op(np.diag([0.0, 1.0, 2.5]), hermitian=True))
        A = random_operator(3, RNG)
        P_part, Pperp = pinching_projector(S, A)
        assert np.allclose(P_part.entries, np.diag(np.diag(A.entries)))
        assert operator_norm(P_part + Pperp - A) <= 1e-13

    def test_function_of_H_is_kernel(self):
        S = spectral_decompose(random_hermitian(6, RNG))
        f = apply_function(S, np.cos)
        P_part, Pperp = pinching_projector(S, f)
        assert operator_norm(Pperp) <= 1e-11
        assert operator_norm(P_part - f) <= 1e-11

    def test_idempotent_and_annihilating(self):
        S = spectral_decompose(random_hermitian(6, RNG))
        A = random_operator(6, RNG)
        P1, Q1 = pinching_projector(S, A)
        P2, _ = pinching_projector(S, P1)
        _, Q2 = pinching_projector(S, Q1)
        assert operator_norm(P2 - P1) <= 1e-12
        assert operator_norm(Q2 - Q1) <= 1e-12
        _, QofP = pinching_projector(S, P1)
        assert operator_norm(QofP) <= 1e-12

    def test_resolvent_sweep_limit(self):
        """Pinching complement is the strong eps -> 0 limit of L(L-eps)^{-1}."""
        from latkubo.operators import schatten_norm
        S = spectral_decompose(random_hermitian(6, np.random.default_rng(5)))
        A = random_operator(6, np.random.default_rng(6))
        _, Aperp = pinching_projector(S, A)
        prev = np.inf
        for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
            Z = (-1.0) * liouvillian_apply(S, liouvillian_resolvent(S, eps, 0.0, A))
            dev = schatten_norm(ALG6, Z - Aperp, 2)
            assert dev < prev + 1e-14
            prev = dev
        assert prev <= 1e-4
