import warnings

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from gausselim.hilbert import SpaceLayout, FockMode, dag, destroy, position, momentum
from gausselim.moments import (CoarseGrainingWarning, ConstructionError, GaussianTransducer,
                               HomodyneChannel, NonStableDrift, build_diffusion, build_drift,
                               coarse_grain_channel, heisenberg_min_eig, load_matrix_csv,
                               lyapunov_residual, lyapunov_steady, riccati_rhs, riccati_steady,
                               save_matrix_csv, solve_moments, symplectic_form)
from gausselim.scenarios import cavity_transducer, thermal_homodyne_channel, twoosc_transducer


def damped_modes(n_modes, kappas, nbars):
    jumps = []
    for k in range(n_modes):
        for vec, rate in (((1, 1j), kappas[k] * (nbars[k] + 1)), ((1, -1j), kappas[k] * nbars[k])):
            if rate > 0:
                xi = np.zeros(2 * n_modes, complex)
                xi[2 * k: 2 * k + 2] = np.sqrt(rate / 2) * np.array(vec)
                jumps.append(xi)
    return jumps


@st.composite
def transducers(draw):
    n = draw(st.integers(1, 2))
    seed = draw(st.integers(0, 2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(2 * n, 2 * n))
    R = 0.5 * (R + R.T)
    kappas = rng.uniform(0.5, 2.0, size=n)
    nbars = rng.uniform(0.0, 2.0, size=n)
    jumps = damped_modes(n, kappas, nbars)
    alpha = rng.uniform(0.2, 1.0) * np.exp(1j * rng.uniform(0, 2 * np.pi))
    lam = alpha * jumps[0]
    ch = HomodyneChannel(lam.real, lam.imag)
    t = GaussianTransducer(R=R, jumps=tuple(jumps), channels=(ch,))
    # parametric Hamiltonians can out-pump the damping; those are rejected elsewhere
    assume(np.linalg.eigvals(build_drift(t)).real.max() < -1e-3)
    return t


class TestConstruction:
    def test_symplectic_form(self):
        s = symplectic_form(2)
        assert np.allclose(s, [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]])
        assert np.allclose(s @ s.T, np.eye(4))

    def test_thermal_cavity_closed_form(self):
        kappa, nbar = 1.3, 2.0
        m = solve_moments(cavity_transducer(kappa, nbar))
        assert np.allclose(m.A, -kappa / 2 * np.eye(2), atol=1e-14)
        assert np.allclose(m.N_diff, kappa * (nbar + 0.5) * np.eye(2), atol=1e-14)
        assert np.allclose(m.gamma_u, (2 * nbar + 1) * np.eye(2), atol=1e-12)
        assert np.allclose(m.gamma_c, (2 * nbar + 1) * np.eye(2), atol=1e-10)

    def test_unit_kappa_matches_textbook_diffusion(self):
        m = solve_moments(cavity_transducer(1.0, 0.7))
        assert np.allclose(m.N_diff, (0.7 + 0.5) * np.eye(2))

    def test_asymmetric_hamiltonian_rejected(self):
        with pytest.raises(ConstructionError):
            GaussianTransducer(R=np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_unbacked_channel_rejected(self):
        ch = thermal_homodyne_channel(1.0, 0.0)
        with pytest.raises(ConstructionError):
            GaussianTransducer(R=np.zeros((2, 2)), jumps=(np.array([0.1, 0.1j]),), channels=(ch,))

    def test_undamped_mode_is_not_hurwitz(self):
        t = GaussianTransducer(R=np.eye(2))
        with pytest.raises(NonStableDrift):
            lyapunov_steady(build_drift(t), build_diffusion(t))

    def test_detuned_channel_halves(self):
        ch = thermal_homodyne_channel(1.0, 2.0, detuning=3.0)
        t = np.linspace(0, 2, 7)
        lam_t = ch.c_at(t) + 1j * ch.m_at(t)
        sig = symplectic_form(1)
        rot = [np.cos(3 * x) * ch.xi + np.sin(3 * x) * sig.T @ ch.xi for x in t]
        assert np.allclose(lam_t, rot)
        plus = ch.c_plus * np.exp(3j * t[:, None]) + ch.c_minus * np.exp(-3j * t[:, None])
        assert np.allclose(plus, ch.c_at(t))

    def test_sideband_vectors(self):
        nbar, kappa = 2.0, 1.0
        ch = thermal_homodyne_channel(kappa, nbar, detuning=-10.0)
        assert np.allclose(ch.c_plus, np.sqrt(kappa / (8 * (2 * nbar + 1))) * np.array([1, -1j]))
        assert np.allclose(ch.m_plus, np.sqrt(kappa * (2 * nbar + 1) / 8) * np.array([1j, 1]))
        assert np.allclose(ch.m_sin, np.sqrt(kappa * (2 * nbar + 1) / 2) * np.array([-1, 0]))

    def test_coarse_graining_warns_when_detuning_is_slow(self):
        t = cavity_transducer(1.0, 0.0)
        ch = thermal_homodyne_channel(1.0, 0.0, detuning=1.0)
        with pytest.warns(CoarseGrainingWarning):
            coarse_grain_channel(ch, build_drift(t))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            coarse_grain_channel(thermal_homodyne_channel(1.0, 0.0, detuning=10.0), build_drift(t))


class TestSteadyStates:
    def test_lyapunov_against_quadrature(self):
        t = twoosc_transducer(1.0, 0.1, 2.0, 5.0, 1.0)
        A, N = build_drift(t), build_diffusion(t)
        G = lyapunov_steady(A, N)
        integrand = lambda s: (expm(A * s) @ (2 * N) @ expm(A.T * s)).ravel()
        ref, _ = quad_vec(integrand, 0, np.inf, epsabs=1e-12, epsrel=1e-11, limit=2000)
        assert np.max(np.abs(G - ref.reshape(4, 4))) <= 1e-8 * np.max(np.abs(G))

    def test_riccati_against_rk4(self):
        t = twoosc_transducer(1.0, 0.1, 2.0, 5.0, 1.0)
        A, N = build_drift(t), build_diffusion(t)
        Gu = lyapunov_steady(A, N)
        Gc, Q, info = riccati_steady(A, N, t.channels, t.sigma, Gu)
        # fixed-step RK4 on the Riccati ODE, then halve the step as a check
        def rk4(h, T):
            G = Gu.copy()
            f = lambda X: riccati_rhs(X, A, N, t.sigma, t.channels)
            for _ in range(int(round(T / h))):
                k1 = f(G)
                k2 = f(G + 0.5 * h * k1)
                k3 = f(G + 0.5 * h * k2)
                k4 = f(G + h * k3)
                G = G + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            return G
        G1 = rk4(0.02, 400.0)
        G2 = rk4(0.01, 400.0)
        assert np.max(np.abs(G1 - G2)) < 1e-9
        assert np.max(np.abs(Gc - G2)) <= 1e-8 * np.max(np.abs(Gc))
        assert info["residual"] <= 1e-10

    def test_two_oscillator_conditional_differs(self):
        m = solve_moments(twoosc_transducer(1.0, 0.1, 2.0, 5.0, 1.0))
        gap = m.gamma_u - m.gamma_c
        assert np.max(np.abs(gap)) > 1e-2
        assert np.linalg.eigvalsh(gap).min() >= -1e-9
        assert m.initial_condition_gap < 1e-8

    @given(transducers())
    def test_random_transducers_are_physical(self, t):
        m = solve_moments(t)
        assert lyapunov_residual(m.A, m.N_diff, m.gamma_u) <= 1e-10
        assert m.riccati_info["residual"] <= 1e-10
        assert np.allclose(m.gamma_u, m.gamma_u.T)
        assert heisenberg_min_eig(m.gamma_u, m.sigma) >= -1e-9
        assert heisenberg_min_eig(m.gamma_c, m.sigma) >= -1e-9
        assert np.linalg.eigvalsh(m.gamma_u - m.gamma_c).min() >= -1e-9 * np.abs(m.gamma_u).max()


class TestFockOracle:
    """Compare A and N with Heisenberg-picture Lindblad action on truncated Fock spaces."""

    cutoff = 30
    block = 20

    def _ops(self, n_modes):
        layout = SpaceLayout(tuple(FockMode(self.cutoff if n_modes == 1 else 12) for _ in range(n_modes)))
        r = []
        for k in range(n_modes):
            n = layout.dims[k]
            r += [layout.embed(k, position(n)), layout.embed(k, momentum(n))]
        return layout, r

    def _adjoint(self, H, jumps):
        def Ld(X):
            out = 1j * (H @ X - X @ H)
            for j in jumps:
                jd = dag(j)
                out += jd @ X @ j - 0.5 * (jd @ j @ X + X @ jd @ j)
            return out
        return Ld

    def _interior(self, layout, X):
        # keep basis states away from every mode's top Fock levels
        idx = np.ndindex(*layout.dims)
        keep = [i for i, occ in enumerate(idx) if all(o < d - 4 for o, d in zip(occ, layout.dims))]
        return X[np.ix_(keep, keep)]

    @pytest.mark.parametrize("seed,n_modes", [(1, 1), (2, 1), (3, 2)])
    def test_drift_and_diffusion(self, seed, n_modes):
        rng = np.random.default_rng(seed)
        R = rng.normal(size=(2 * n_modes,) * 2)
        R = 0.5 * (R + R.T)
        jumps = damped_modes(n_modes, rng.uniform(0.5, 1.5, n_modes), rng.uniform(0, 1, n_modes))
        extra = rng.normal(size=2 * n_modes) + 1j * rng.normal(size=2 * n_modes)
        jumps.append(0.3 * extra)
        t = GaussianTransducer(R=R, jumps=tuple(jumps))
        A, N = build_drift(t), build_diffusion(t)
        layout, r = self._ops(n_modes)
        H = 0.5 * sum(R[i, k] * r[i] @ r[k] for i in range(len(r)) for k in range(len(r)))
        J = [sum(x[i] * r[i] for i in range(len(r))) for x in jumps]
        Ld = self._adjoint(H, J)
        for k in range(len(r)):
            lhs = self._interior(layout, Ld(r[k]))
            rhs = self._interior(layout, sum(A[k, l] * r[l] for l in range(len(r))))
            assert np.max(np.abs(lhs - rhs)) <= 1e-6
        eye = np.eye(layout.dim)
        for k in range(len(r)):
            for l in range(len(r)):
                lhs = Ld(r[k] @ r[l] + r[l] @ r[k])
                rhs = sum(A[k, m] * (r[m] @ r[l] + r[l] @ r[m]) + A[l, m] * (r[k] @ r[m] + r[m] @ r[k])
                          for m in range(len(r))) + 2 * N[k, l] * eye
                assert np.max(np.abs(self._interior(layout, lhs - rhs))) <= 1e-6


def test_matrix_csv_round_trip(tmp_path, rng):
    M = rng.normal(size=(3, 4))
    save_matrix_csv(tmp_path / "m.csv", M)
    assert np.array_equal(load_matrix_csv(tmp_path / "m.csv"), M)
    C = M[:, :3] + 1j * rng.normal(size=(3, 3))
    save_matrix_csv(tmp_path / "c.csv", C)
    assert np.array_equal(load_matrix_csv(tmp_path / "c.csv", complex_pairs=True), C)
