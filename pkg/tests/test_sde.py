import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gausselim.hilbert import SIGMA_X, SIGMA_Z, SMEGenerator, dag, dissipator, ket, projector
from gausselim.metrics import bloch_vector, trace_distance
from gausselim.scenarios import build, make_config
from gausselim.sde import (IntegrationConfig, PairingError, SimModel, StepSizeError, filter_reduced,
                           integrated_current, lindblad_rhs, run_ensemble, simulate_full, step,
                           unconditional, wiener_increments)

from conftest import random_density, random_operator

PLUS = projector(np.array([1, 1]) / np.sqrt(2))


def exact_flow(gen, rho, t):
    d = gen.dim
    y0 = rho.ravel()
    sol = solve_ivp(lindblad_rhs(gen), (0, t), np.concatenate([y0.real, y0.imag]),
                    method="DOP853", rtol=1e-13, atol=1e-15)
    y = sol.y[:, -1]
    return (y[: d * d] + 1j * y[d * d:]).reshape(d, d)


def random_generator(d, rng):
    H = random_operator(d, rng)
    jumps = (0.4 * random_operator(d, rng),)
    return SMEGenerator(H=0.5 * (H + dag(H)), jumps=jumps, meas=(0.5 * jumps[0],))


def local_errors(advance, gen, rho, dts):
    return np.array([np.abs(advance(dt) - exact_flow(gen, rho, dt)).max() for dt in dts])


class TestStep:
    def test_identity_without_dynamics(self, rng):
        rho = random_density(3, rng)
        gen = SMEGenerator(H=np.zeros((3, 3), complex), jumps=(), meas=(np.zeros((3, 3), complex),))
        assert np.allclose(step(rho, gen, [0.0], 0.1), rho, atol=1e-15)

    def test_requires_one_increment_per_channel(self, rng):
        gen = random_generator(3, rng)
        with pytest.raises(ValueError):
            step(random_density(3, rng), gen, [0.1, 0.2], 0.01)

    def test_trace_drift_raises(self):
        # every term of the step is traceless, so only an off-trace input can drift
        gen = SMEGenerator(H=np.zeros((2, 2), complex), jumps=(), meas=(np.zeros((2, 2), complex),))
        with pytest.raises(StepSizeError):
            step(PLUS * 1.01, gen, [0.0], 0.01)

    def test_dephasing_envelope(self):
        chi, nbar, kappa = 0.1, 2.0, 1.0
        gamma = 2 * chi ** 2 * (2 * nbar + 1) / kappa
        gen = SMEGenerator(H=np.zeros((2, 2), complex), jumps=(np.sqrt(gamma) * SIGMA_Z,), meas=())
        dt, n = 1e-3, 10000
        rho = PLUS.copy()
        for _ in range(n):
            rho = step(rho, gen, [], dt)
        want = np.exp(-2 * gamma * n * dt)
        assert np.trace(SIGMA_X @ rho).real == pytest.approx(want, abs=5e-4)

    def test_euler_local_error_slope(self, rng):
        gen = random_generator(3, rng)
        rho = random_density(3, rng)
        dts = 0.02 / 2 ** np.arange(5)
        err = local_errors(lambda dt: step(rho, gen, [0.0], dt), gen, rho, dts)
        slopes = np.log2(err[:-1] / err[1:])
        assert np.all(np.abs(slopes - 2.0) <= 0.1), slopes

    def test_kernel_local_error_slope(self, rng):
        gen = random_generator(3, rng)
        rho = random_density(3, rng)
        model = SimModel(gen, rho, 3, "test")
        dts = 0.02 / 2 ** np.arange(5)

        def advance(dt):
            cfg = IntegrationConfig(dt=dt, T=dt, record_every=1)
            return model.run(np.zeros((1, 1)), 0, cfg)[2]

        err = local_errors(advance, gen, rho, dts)
        slopes = np.log2(err[:-1] / err[1:])
        assert np.all(np.abs(slopes - 2.0) <= 0.1), slopes


class TestNoise:
    def test_increments_are_keyed(self):
        a = wiener_increments(3, 7, 100, 2, 0.01)
        assert np.array_equal(a, wiener_increments(3, 7, 100, 2, 0.01))
        assert not np.array_equal(a, wiener_increments(3, 8, 100, 2, 0.01))
        assert a.shape == (100, 2)

    def test_zero_drift_integrated_current_variance(self):
        gen = SMEGenerator(H=np.zeros((2, 2), complex), jumps=(), meas=(np.zeros((2, 2), complex),))
        model = SimModel(gen, PLUS, 2, "null")
        cfg = IntegrationConfig(dt=0.01, T=2.0, seed=4)
        J = np.array([integrated_current(simulate_full(model, cfg, k), 2.0)[0] for k in range(1000)])
        var = J.var(ddof=1)
        sigma = np.sqrt(2 * 2.0 ** 2 / (len(J) - 1))
        assert abs(var - 2.0) <= 3 * sigma
        assert integrated_current(simulate_full(model, cfg, 0), 0.0)[0] == 0.0

    def test_parity_mean_current(self):
        chi, nbar, T = 0.1, 0.0, 10.0
        sm = build(make_config("parity", chi=chi, nbar=nbar, models=("GAE",)))
        rho = projector(ket(1, 1))
        model = SimModel(sm.models["GAE"].generator, rho, 4, "GAE")
        cfg = IntegrationConfig(dt=0.01, T=T, seed=2)
        J = np.array([integrated_current(simulate_full(model, cfg, k), T)[0] for k in range(400)])
        want = 2 * np.sqrt(8 / (2 * nbar + 1)) * chi * T
        assert abs(J.mean() - want) <= 3 * np.sqrt(T / len(J))


class TestTrajectories:
    def test_zero_coupling_keeps_the_qubit_fixed(self):
        cfg = make_config("qnd", chi=0.0, nbar=1.0, cutoffs=(10,), models=("Full", "GAE", "DOE"))
        sm = build(cfg)
        icfg = IntegrationConfig(dt=0.01, T=5.0, seed=1)
        rec = simulate_full(sm.models["Full"], icfg, 0)
        assert np.max(np.abs(rec.states - PLUS)) <= 1e-12
        for name in ("GAE", "DOE"):
            for pairing in ("record", "noise"):
                red = filter_reduced(sm.models[name], rec, icfg, pairing=pairing)
                assert np.max(np.abs(red.states - PLUS)) <= 1e-12

    def test_self_pairing_reproduces_the_state(self):
        sm = build(make_config("qnd", models=("GAE",)))
        model = sm.models["GAE"]
        icfg = IntegrationConfig(dt=0.01, T=20.0, seed=3)
        rec = simulate_full(model, icfg, 0)
        red = filter_reduced(model, rec, icfg, pairing="record")
        assert np.max(np.abs(red.states - rec.states)) <= 1e-10
        assert np.allclose(red.increments, rec.increments, atol=1e-12)

    def test_current_is_drift_plus_noise(self):
        sm = build(make_config("qnd", models=("GAE",)))
        model = sm.models["GAE"]
        icfg = IntegrationConfig(dt=0.01, T=1.0, seed=3, record_every=1)
        rec = simulate_full(model, icfg, 0)
        drift = np.array([model.generator.current_drift(r)[0] for r in rec.states[:-1]])
        assert np.allclose(rec.currents[:, 0], drift * icfg.dt + rec.increments[:, 0], atol=1e-14)

    def test_pairing_errors(self):
        sm = build(make_config("qnd", models=("GAE",)))
        model = sm.models["GAE"]
        icfg = IntegrationConfig(dt=0.01, T=1.0)
        rec = simulate_full(model, icfg, 0)
        two = SimModel(SMEGenerator(H=np.zeros((2, 2), complex), jumps=(SIGMA_Z,),
                                    meas=(SIGMA_Z, SIGMA_Z)), PLUS, 2, "two")
        with pytest.raises(PairingError):
            filter_reduced(two, rec, icfg)
        with pytest.raises(PairingError):
            filter_reduced(model, rec, IntegrationConfig(dt=0.005, T=1.0))
        with pytest.raises(PairingError):
            run_ensemble(model, {"two": two}, 2, icfg)

    def test_worker_count_does_not_change_results(self):
        sm = build(make_config("qnd", cutoffs=(8,), models=("Full", "GAE", "DOE")))
        icfg = IntegrationConfig(dt=0.005, T=2.0, seed=9)
        runs = [run_ensemble(sm.models["Full"], sm.reduced, 8, icfg, workers=w, pairing=p)
                for w in (1, 8) for p in ("noise",)]
        for a, b in zip(*runs):
            assert a.index == b.index
            assert np.array_equal(a.full.currents, b.full.currents)
            assert np.array_equal(a.full.states, b.full.states)
            for name in a.reduced:
                assert np.array_equal(a.reduced[name].states, b.reduced[name].states)


class TestEnsembleProperties:
    @pytest.mark.parametrize("scenario,kw,model", [
        ("qnd", dict(nbar=2.0, cutoffs=(20,)), "Full"),
        ("qnd", dict(nbar=2.0), "GAE"),
        ("jc", dict(nbar=1.0, g=0.3, cutoffs=(12,)), "GAE"),
    ])
    def test_martingale(self, scenario, kw, model):
        """Ensemble mean of conditional states follows the unconditional dynamics."""
        sm = build(make_config(scenario, models=(model,), **kw))
        m = sm.models[model]
        icfg = IntegrationConfig(dt=0.005, T=3.0, seed=21, record_every=60)
        states = np.stack([simulate_full(m, icfg, k).states for k in range(500)])
        mean = states.mean(axis=0)
        ref = unconditional(m, icfg)
        bloch = np.array([[bloch_vector(r) for r in traj] for traj in states])
        se = bloch.std(axis=0, ddof=1) / np.sqrt(len(states))
        for t in range(len(ref)):
            D = trace_distance(mean[t], ref[t])
            assert D <= 3 * 0.5 * np.linalg.norm(se[t]) + 1e-12

    def test_unconditional_matches_lindblad_solution(self):
        sm = build(make_config("qnd", nbar=2.0, models=("GAE",)))
        m = sm.models["GAE"]
        icfg = IntegrationConfig(dt=0.001, T=5.0, record_every=5000)
        got = unconditional(m, icfg)[-1]
        want = exact_flow(m.generator, m.rho0, 5.0)
        assert trace_distance(got, want) <= 1e-3

    @pytest.mark.slow
    def test_collapse_statistics(self):
        """n=0 readout collapses sigma_z to +-1 with the initial weights 1/2, 1/2."""
        sm = build(make_config("qnd", nbar=0.0, cutoffs=(8,), models=("Full",)))
        m = sm.models["Full"]
        icfg = IntegrationConfig(dt=0.01, T=150.0, seed=5, record_every=15000)
        n = 500
        z = np.array([np.trace(SIGMA_Z @ simulate_full(m, icfg, k).states[-1]).real for k in range(n)])
        assert np.mean(np.abs(z) > 0.99) > 0.97
        up = np.mean(z > 0)
        assert abs(up - 0.5) <= 3 * np.sqrt(0.25 / n)
