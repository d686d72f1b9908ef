import numpy as np
import pytest
from hypothesis import given, strategies as st

from gausselim.hilbert import ket, projector
from gausselim.metrics import (EmptySelection, Histogram, average_distance, bloch_vector,
                               current_histogram, integrated_currents, log_negativity,
                               partial_transpose, postselect, postselection_sweep, trace_distance,
                               trace_distance_qubit)
from gausselim.sde import PairedRecord, TrajectoryRecord

from conftest import random_density

BELL = projector((ket(1, 0) + ket(0, 1)) / np.sqrt(2))


def fake_record(currents, states, dt=0.1, index=0, tag="Full"):
    currents = np.asarray(currents, float).reshape(-1, 1)
    n_rec = len(states)
    stride = max(1, currents.shape[0] // max(1, n_rec - 1))
    times = np.arange(n_rec) * stride * dt
    return TrajectoryRecord(times=times, dt=dt, currents=currents, increments=currents.copy(),
                            states=np.asarray(states), seed=0, index=index, tag=tag)


class TestTraceDistance:
    def test_dual_formulas_agree(self, rng):
        for _ in range(1000):
            a, b = random_density(2, rng, rank=int(rng.integers(1, 3))), random_density(2, rng)
            assert trace_distance(a, b) == pytest.approx(trace_distance_qubit(a, b), abs=1e-12)

    @given(st.integers(0, 10 ** 6), st.integers(2, 6))
    def test_metric_axioms(self, seed, d):
        rng = np.random.default_rng(seed)
        a, b, c = (random_density(d, rng) for _ in range(3))
        assert trace_distance(a, a) <= 1e-12
        assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-12)
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-12
        assert 0.0 <= trace_distance(a, b) <= 1.0

    def test_orthogonal_states(self):
        assert trace_distance(projector(ket(1)), projector(ket(0))) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            trace_distance(np.eye(2) / 2, np.eye(3) / 3)
        with pytest.raises(ValueError):
            trace_distance_qubit(np.eye(4) / 4, np.eye(4) / 4)

    def test_bloch_vector_convention(self):
        plus = projector(np.array([1, 1]) / np.sqrt(2))
        assert np.allclose(bloch_vector(plus), [1, 0, 0])
        assert np.allclose(bloch_vector(projector(ket(1))), [0, 0, 1])


class TestAverageDistance:
    def test_identical_models_give_zero(self, rng):
        states = np.stack([random_density(2, rng) for _ in range(4)])
        recs = [PairedRecord(k, fake_record(np.zeros(30), states),
                             {"GAE": fake_record(np.zeros(30), states)}) for k in range(3)]
        ds = average_distance(recs, "GAE")
        assert np.all(ds.mean == 0) and ds.time_average == 0

    def test_mean_and_window(self):
        a, b = projector(ket(1)), projector(ket(0))
        full = np.stack([a, a, a, a])
        recs = [PairedRecord(0, fake_record(np.zeros(30), full), {"M": fake_record(np.zeros(30), np.stack([a, b, a, b]))}),
                PairedRecord(1, fake_record(np.zeros(30), full), {"M": fake_record(np.zeros(30), np.stack([a, a, a, a]))})]
        ds = average_distance(recs, "M")
        assert np.allclose(ds.mean, [0, 0.5, 0, 0.5])
        assert ds.time_average == pytest.approx(0.25)
        short = average_distance(recs, "M", T_m=1.0)
        assert len(short.times) == 2
        assert ds.block_averages(2) == pytest.approx([0.5, 0.0])

    def test_needs_two_trajectories(self):
        rec = fake_record(np.zeros(3), np.stack([np.eye(2) / 2] * 2))
        with pytest.raises(ValueError):
            average_distance([PairedRecord(0, rec, {"M": rec})], "M")


class TestNegativity:
    def test_bell_state(self):
        assert log_negativity(BELL) == pytest.approx(1.0, abs=1e-12)

    def test_product_state(self, rng):
        rho = np.kron(random_density(2, rng), random_density(2, rng))
        assert log_negativity(rho) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("p", [0.0, 0.2, 1 / 3, 0.5, 0.8, 1.0])
    def test_werner_oracle(self, p):
        rho = p * BELL + (1 - p) * np.eye(4) / 4
        want = np.log2((1 + 3 * p) / 2) if p > 1 / 3 else 0.0
        assert log_negativity(rho) == pytest.approx(want, abs=1e-12)

    def test_partial_transpose_involution(self, rng):
        rho = random_density(6, rng)
        pt = partial_transpose(rho, (2, 3), sys=1)
        assert np.allclose(partial_transpose(pt, (2, 3), sys=1), rho)
        with pytest.raises(ValueError):
            partial_transpose(rho, (2, 2))


class TestPostselection:
    def _records(self, rng, n=200):
        """Currents near 0 carry the Bell state, the rest carry a product state."""
        recs = []
        prod = projector(ket(1, 1))
        for k in range(n):
            J = rng.normal(scale=5.0)
            dI = np.full(10, J / 10)
            state = BELL if abs(J) < 2 else prod
            recs.append(fake_record(dI, np.stack([np.eye(4) / 4, state]), dt=1.0, index=k))
        return recs

    def test_threshold_monotonicity(self, rng):
        recs = self._records(rng)
        nus = np.linspace(0.5, 12, 10)
        res = postselection_sweep(recs, 10.0, nus)
        probs = [r.success_probability for r in res if r is not None]
        assert np.all(np.diff(probs) >= 0)
        small = [r for r in res if r is not None and r.threshold < 2][0]
        assert small.log_negativity == pytest.approx(1.0)
        assert res[-1].log_negativity < small.log_negativity

    def test_integrated_currents(self, rng):
        recs = self._records(rng, 5)
        J = integrated_currents(recs, 10.0)
        assert np.allclose(J, [r.currents.sum() for r in recs])

    def test_empty_selection(self, rng):
        recs = [fake_record(np.full(10, 1.0), np.stack([np.eye(4) / 4] * 2), dt=1.0)]
        with pytest.raises(EmptySelection):
            postselect(recs, 10.0, 0.5)
        assert postselection_sweep(recs, 10.0, [0.5]) == [None]


class TestHistogram:
    def test_counts_and_moments(self, rng):
        J = rng.normal(2.0, 1.5, size=4000)
        recs = [fake_record([j], np.stack([np.eye(2) / 2] * 2), dt=1.0) for j in J]
        h = current_histogram(recs, 1.0)
        assert h.counts.sum() == len(J)
        c = h.centers
        mean = (c * h.counts).sum() / h.counts.sum()
        var = ((c - mean) ** 2 * h.counts).sum() / h.counts.sum()
        assert mean == pytest.approx(J.mean(), abs=0.05)
        assert var == pytest.approx(J.var(), rel=0.05)
        assert len(h.peaks()) == 1

    def test_trimodal(self, rng):
        J = np.concatenate([rng.normal(m, 1.0, size=n) for m, n in ((-8, 250), (0, 500), (8, 250))])
        recs = [fake_record([j], np.stack([np.eye(2) / 2] * 2), dt=1.0) for j in J]
        peaks = current_histogram(recs, 1.0).peaks()
        assert len(peaks) == 3
        assert np.allclose(peaks, [-8, 0, 8], atol=1.0)

    def test_edge_peak_counts(self):
        h = Histogram(edges=np.arange(6.0), counts=np.array([9, 3, 1, 3, 9]))
        assert len(h.peaks(smooth=1)) == 2
