import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqrdqn import metrics
from vqrdqn.circuit import CircuitSpec, Topology, prepare
from vqrdqn.metrics import FidelityHistogram


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


class TestFidelity:
    def test_self_fidelity(self):
        spec = CircuitSpec(3, 2, "ring")
        psi = prepare(spec, np.random.default_rng(0).normal(size=spec.n_params))
        assert metrics.fidelity(psi, psi) == pytest.approx(1.0, abs=1e-14)

    def test_orthogonal(self):
        a = np.array([1, 1, 0, 0]) / np.sqrt(2)
        b = np.array([1, -1, 0, 0]) / np.sqrt(2)
        assert metrics.fidelity(a, b) == pytest.approx(0.0, abs=1e-15)

    def test_samples_in_unit_interval(self):
        f = metrics.fidelity_samples(CircuitSpec(3, 2, "star"), 10**4, seed=0)
        assert f.shape == (10**4,)
        assert f.min() >= 0 and f.max() <= 1

    def test_samples_reproducible(self):
        spec = CircuitSpec(2, 1)
        np.testing.assert_array_equal(metrics.fidelity_samples(spec, 100, 3),
                                      metrics.fidelity_samples(spec, 100, 3))


class TestHaar:
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_bin_masses_integrate_density(self, n):
        N = 2**n
        masses = metrics.haar_bin_masses(n, 75)
        assert masses.sum() == pytest.approx(1.0, abs=1e-12)
        # fine trapezoid rule on the density (N-1)(1-F)^(N-2) inside each bin
        for k in (0, 10, 40, 74):
            f = np.linspace(k / 75, (k + 1) / 75, 2001)
            numeric = np.trapezoid((N - 1) * (1 - f) ** (N - 2), f)
            assert masses[k] == pytest.approx(numeric, rel=1e-6, abs=1e-15)

    def test_haar_states_score_near_zero(self):
        rng = np.random.default_rng(0)
        f = [metrics.fidelity(random_state(3, rng), random_state(3, rng)) for _ in range(20000)]
        hist = FidelityHistogram.from_samples(f)
        assert metrics.expressibility_kl(hist, 3) < 0.02


class TestKL:
    def test_exact_haar_histogram(self):
        q = metrics.haar_bin_masses(4)
        hist = FidelityHistogram(q * 1e6, 10**6)
        assert metrics.expressibility_kl(hist, 4) == pytest.approx(0.0, abs=1e-12)

    def test_single_spike_at_one(self):
        hist = FidelityHistogram.from_samples(np.ones(500))
        q_last = metrics.haar_bin_masses(2)[-1]
        assert metrics.expressibility_kl(hist, 2) == pytest.approx(-np.log(q_last))
        assert metrics.expressibility_kl(hist, 2) > 10

    def test_idle_circuit(self):
        report = metrics.expressibility(CircuitSpec(2, 0), n_pairs=300)
        assert report.kl > 10

    def test_empty_histogram(self):
        with pytest.raises(ValueError):
            metrics.expressibility_kl(FidelityHistogram(np.zeros(75), 0), 2)

    def test_non_negative(self):
        for topo in Topology:
            assert metrics.expressibility(CircuitSpec(3, 1, topo), 500).kl >= 0


class TestMeyerWallach:
    def test_product_states(self):
        zero = np.zeros(8)
        zero[0] = 1
        assert metrics.meyer_wallach(zero) == pytest.approx(0.0, abs=1e-15)
        assert metrics.meyer_wallach(np.full(8, 1 / np.sqrt(8))) == pytest.approx(0.0, abs=1e-14)

    def test_bell(self):
        bell = np.array([1, 0, 0, 1]) / np.sqrt(2)
        np.testing.assert_allclose(metrics.single_qubit_purities(bell), [[0.5, 0.5]])
        assert metrics.meyer_wallach(bell) == pytest.approx(1.0)

    def test_ghz(self):
        ghz = np.zeros(8)
        ghz[[0, 7]] = 1 / np.sqrt(2)
        assert metrics.meyer_wallach(ghz) == pytest.approx(1.0)

    def test_partial_trace_against_dense(self):
        rng = np.random.default_rng(4)
        psi = random_state(3, rng)
        rho = np.outer(psi, psi.conj()).reshape([2] * 6)
        # reduced state of qubit 1: trace out qubits 0 and 2
        rho1 = np.einsum("aibajb->ij", rho)
        purity = np.real(np.trace(rho1 @ rho1))
        assert metrics.single_qubit_purities(psi)[0, 1] == pytest.approx(purity, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_bounds(self, n, seed):
        q = metrics.meyer_wallach(random_state(n, np.random.default_rng(seed)))
        assert -1e-12 <= q <= 1 + 1e-12

    def test_single_qubit_average_is_zero(self):
        assert metrics.average_mw(CircuitSpec(1, 3), 200).mean_mw == pytest.approx(0.0, abs=1e-14)

    def test_hadamard_only_is_zero(self):
        assert metrics.average_mw(CircuitSpec(4, 0), 50).mean_mw == pytest.approx(0.0, abs=1e-14)


class TestReport:
    def test_rows_and_columns(self):
        rows = metrics.topology_report(3, 1, n_pairs=400, n_states=100, seed=2)
        assert len(rows) == 4
        assert {r["topology"] for r in rows} == {t.value for t in Topology}
        assert all(r["seed"] == 2 and r["n_samples"] == "400/100" for r in rows)
        assert [r["kl"] for r in rows] == sorted(r["kl"] for r in rows)
        assert all(np.isfinite(r["kl"]) and np.isfinite(r["mean_mw"]) for r in rows)

    def test_reproducible(self):
        a = metrics.report_csv(metrics.topology_report(3, 2, 300, 100, seed=5))
        b = metrics.report_csv(metrics.topology_report(3, 2, 300, 100, seed=5))
        assert a == b
        assert a.splitlines()[0] == ",".join(metrics.REPORT_COLUMNS)
