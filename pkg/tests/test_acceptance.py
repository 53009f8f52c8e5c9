"""End-to-end acceptance checks with planted ground truth.

Each test carries an ``acceptance`` marker; conftest prints one PASS/FAIL
line per criterion after the run, with the measured numbers attached.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from qdotkit.bench import random_hamiltonians, run_benchmark
from qdotkit.circuits import ComplexityQuery, generate_collection, required_circuits_matrix_elements
from qdotkit.cli import main
from qdotkit.clustering import ClusteringConfig, Partition, cluster_qubits
from qdotkit.cn_model import marginal_noise, reconstruct_cn, reconstruct_tpn
from qdotkit.correlations import (
    AC,
    WC,
    classical_corr_ac,
    classical_corr_wc,
    coherence_report,
    coherence_strength_ac,
    correlation_matrix_from_marginals,
    cs_lower_bound,
    quantum_corr,
)
from qdotkit.marginals import estimate_marginals, noise_matrix_confidence
from qdotkit.povm import (
    Povm,
    StochasticMatrix,
    ac_distance,
    born_probabilities,
    ideal_povm,
    ket_to_dm,
    measurement_choi,
    wc_distance,
    wc_distance_stochastic,
)
from qdotkit.simulate import (
    PLANTED_MODELS,
    Cluster,
    CnModel,
    QuantumBlock,
    QuantumDeviceSpec,
    flip_matrix,
    planted_model_library,
    sample_cn,
    sample_quantum,
)

from helpers import haar_states, random_povm, random_stochastic

acc = pytest.mark.acceptance
XPOVM = Povm(np.stack([ket_to_dm([1, 1]), ket_to_dm([1, -1])]))


def diag_matrix(povm):
    return np.real(np.einsum("xii->xi", povm.effects))


# ---------------------------------------------------------------------------
# 1. closed-form sample complexity

@acc(1, "closed-form circuit counts")
def test_plan_ddot(capsys, measured):
    t0 = time.perf_counter()
    assert main(["plan", "--protocol", "DDOT", "--k", "2", "--qubits", "127", "--eps", "0.1", "--delta", "0.01"]) == 0
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out.strip()
    measured(f"DDOT {out} in {elapsed * 1e3:.1f} ms")
    assert out == "3166"
    assert elapsed < 1


@acc(1, "closed-form circuit counts")
def test_plan_qdot(capsys, measured):
    assert main(["plan", "--protocol", "QDOT", "--k", "2", "--qubits", "127", "--eps", "0.1", "--delta", "0.01"]) == 0
    out = capsys.readouterr().out.strip()
    measured(f"QDOT {out} (expected 28494)")
    assert out == "28494"


# ---------------------------------------------------------------------------
# 2. the circuit count delivers its guarantee

@acc(2, "circuit-count guarantee, joint max-entry failure rate")
def test_circuit_count_guarantee(measured):
    model = planted_model_library("neighbor_chain_n8")
    eps, delta, reps = 0.1, 0.05, 200
    n_circ = required_circuits_matrix_elements(ComplexityQuery("DDOT", 2, 8, eps, delta))
    subsets = list(itertools.combinations(range(8), 2))
    truth = {s: marginal_noise(model, s).entries for s in subsets}
    failures, worst = 0, 0.0
    for rep in range(reps):
        recs = sample_cn(model, generate_collection("DDOT", 8, n_circ, 1000 + rep), 1, seed=5000 + rep)
        table = estimate_marginals(recs, 2)
        err = max(np.max(np.abs(table[s].matrix.entries - truth[s])) for s in subsets)
        worst = max(worst, err)
        failures += err > eps
    measured(f"{n_circ} circuits, {failures}/{reps} failures, worst entry error {worst:.3f}")
    assert failures / reps <= 0.08


# ---------------------------------------------------------------------------
# 3. estimator correctness

@pytest.fixture(scope="module")
def two_pair_big():
    model = planted_model_library("two_pair_clusters_n6")
    recs = sample_cn(model, generate_collection("DDOT", 6, 3000, 71), 10_000, seed=72)
    return model, estimate_marginals(recs, 2)


@acc(3, "estimator correctness")
def test_two_pair_marginals_within_0_01(two_pair_big, measured):
    model, table = two_pair_big
    worst = max(
        np.max(np.abs(table[s].matrix.entries - marginal_noise(model, s).entries))
        for s in itertools.combinations(range(6), 2)
    )
    measured(f"worst 2-qubit entry error {worst:.4f}")
    assert worst <= 0.01


@acc(3, "estimator correctness")
def test_one_qubit_confidence_bound(measured):
    lam = flip_matrix(0.05, 0.12)
    model = CnModel(1, (Cluster((0,), (), {"": lam}),))
    circuits = generate_collection("DDOT", 1, 400, 73)
    ok = 0
    for rep in range(1000):
        entry = estimate_marginals(sample_cn(model, circuits, 5, seed=rep), 1)[(0,)]
        ok += wc_distance_stochastic(entry.matrix.entries, lam) <= entry.epsilon_star(0.01, per="shots")
    measured(f"bound held {ok}/1000")
    assert ok >= 990


# ---------------------------------------------------------------------------
# 4. distance oracles

@acc(4, "distance oracles")
@pytest.mark.parametrize("d", [2, 4])
def test_ac_matches_haar_mean_tvd(d, measured):
    rng = np.random.default_rng(80 + d)
    kets = haar_states(rng, d, 50_000)
    worst = 0.0
    for _ in range(3):
        m, n = random_povm(rng, d, d), random_povm(rng, d, d)
        diff = m.effects - n.effects
        vals = 0.5 * np.abs(np.real(np.einsum("si,xij,sj->sx", kets.conj(), diff, kets))).sum(axis=1)
        ac = ac_distance(m, n)
        worst = max(worst, abs(vals.mean() - ac) / ac)
    measured(f"d={d} worst relative gap {worst:.1%}")
    assert worst <= 0.05


@acc(4, "distance oracles")
def test_wc_stochastic_equals_povm_wc(measured):
    rng = np.random.default_rng(84)
    worst = 0.0
    for d in (2, 4):
        for _ in range(200):
            a, b = random_stochastic(rng, d), random_stochastic(rng, d)
            pa, pb = StochasticMatrix(a).to_povm(), StochasticMatrix(b).to_povm()
            worst = max(worst, abs(wc_distance_stochastic(a, b) - wc_distance(pa, pb)))
    measured(f"max gap {worst:.1e}")
    assert worst <= 1e-9


@acc(4, "distance oracles")
def test_choi_distance_inequalities(measured):
    rng = np.random.default_rng(85)
    bad_ac = bad_wc = 0
    for i in range(1000):
        d = 2 if i % 2 else 4
        m, n = random_povm(rng, d, d), random_povm(rng, d, d)
        hs = np.linalg.norm(measurement_choi(m) - measurement_choi(n))
        bad_ac += ac_distance(m, n) > math.sqrt(d + 1) / 2 * hs + 1e-12
        bad_wc += wc_distance(m, n) > d / 2 * hs + 1e-12
    measured(f"violations ac {bad_ac}/1000, wc {bad_wc}/1000")
    assert bad_ac == 0 and bad_wc == 0


# ---------------------------------------------------------------------------
# 5. coherence strength

@acc(5, "coherence strength")
def test_x_fixture_strength_and_tight_bound(measured):
    cs = coherence_strength_ac(XPOVM)
    pr_p = born_probabilities(XPOVM, ket_to_dm([1, 1]))
    pr_q = born_probabilities(XPOVM, ket_to_dm([1, -1]))
    bound, _ = cs_lower_bound(pr_p, pr_q, "2", "3")
    measured(f"CS {cs:.12f}, bound {bound:.12f}")
    assert cs == pytest.approx(1 / (2 * math.sqrt(2)), abs=1e-9)
    assert bound == pytest.approx(cs, abs=1e-9)


@acc(5, "coherence strength")
def test_bound_below_strength_on_quantum_fixtures():
    rng = np.random.default_rng(86)
    povms = [XPOVM, Povm(0.5 * ideal_povm(1).effects + 0.5 * XPOVM.effects)]
    povms += [random_povm(rng, 2, 2) for _ in range(3)] + [random_povm(rng, 4, 4) for _ in range(3)]
    for i, m in enumerate(povms):
        q = tuple(range(m.num_qubits))
        spec = QuantumDeviceSpec((QuantumBlock(q, m),))
        recs = sample_quantum(spec, generate_collection("QDOT", m.num_qubits, 3000, 90 + i), 50, seed=190 + i)
        report = coherence_report(estimate_marginals(recs, m.num_qubits)[q], povm=m)
        assert report.cs_lower_bound <= report.cs_ac + report.bound_error


@acc(5, "coherence strength")
def test_diagonal_povms_have_zero_bound():
    rng = np.random.default_rng(87)
    for d in (2, 4):
        for _ in range(20):
            m = StochasticMatrix(random_stochastic(rng, d)).to_povm()
            assert coherence_strength_ac(m) == 0.0
            k = m.num_qubits
            for sp, sq in [("2" * k, "3" * k), ("4" * k, "5" * k)]:
                rho_p = ket_to_dm(_product_ket(sp))
                rho_q = ket_to_dm(_product_ket(sq))
                bound, _ = cs_lower_bound(born_probabilities(m, rho_p), born_probabilities(m, rho_q), sp, sq)
                assert bound == pytest.approx(0, abs=1e-12)


def _product_ket(setting):
    kets = {"2": [1, 1], "3": [1, -1], "4": [1, 1j], "5": [1, -1j]}
    out = np.ones(1)
    for s in setting:
        out = np.kron(out, np.array(kets[s]) / math.sqrt(2))
    return out


# ---------------------------------------------------------------------------
# 6. correlation coefficients

@acc(6, "correlation coefficients")
def test_quantum_equals_classical_on_diagonal(measured):
    rng = np.random.default_rng(88)
    worst = 0.0
    for _ in range(50):
        lam = random_stochastic(rng, 4)
        m = StochasticMatrix(lam).to_povm()
        for t in (0, 1):
            worst = max(worst, abs(quantum_corr(m, t, WC) - classical_corr_wc(lam, t)))
            worst = max(worst, abs(quantum_corr(m, t, AC) - classical_corr_ac(lam, t)))
    measured(f"max gap {worst:.1e}")
    assert worst <= 1e-9


@acc(6, "correlation coefficients")
def test_quantum_at_least_classical():
    rng = np.random.default_rng(89)
    for _ in range(200):
        m = random_povm(rng, 4, 4)
        lam = diag_matrix(m)
        for t in (0, 1):
            assert quantum_corr(m, t, WC) >= classical_corr_wc(lam, t) - 1e-12
            assert quantum_corr(m, t, AC) >= classical_corr_ac(lam, t) - 1e-12


@acc(6, "correlation coefficients")
def test_planted_coefficients_within_estimation_radius(two_pair_big, measured):
    _, table = two_pair_big
    corr = correlation_matrix_from_marginals(table, WC)
    hand = np.zeros((6, 6))
    # c_{j->i} stored at [j, i]; pair (2, 3): flip 0.01 vs 0.2 scaled by the 0.95 survival
    hand[1, 0], hand[0, 1], hand[3, 2], hand[2, 3] = 0.96 * 0.15, 0.96 * 0.10, 0.95 * 0.12, 0.95 * 0.20
    err = np.max(np.abs(corr.values - hand))
    measured(f"c(3->2)={corr.values[3, 2]:.4f} vs 0.114, c(2->3)={corr.values[2, 3]:.4f} vs 0.19, "
             f"max error {err:.4f}, 2eps*={2 * corr.epsilon:.4f}")
    assert err <= 2 * corr.epsilon


# ---------------------------------------------------------------------------
# 7. clustering recovery

@pytest.fixture(scope="module")
def exact_corrs():
    out = {}
    for name in PLANTED_MODELS:
        model = planted_model_library(name)
        n = model.num_qubits
        v = np.zeros((n, n))
        for a, b in itertools.combinations(range(n), 2):
            lam = marginal_noise(model, (a, b)).entries
            v[b, a], v[a, b] = classical_corr_wc(lam, 0), classical_corr_wc(lam, 1)
        out[name] = v
    return out


@acc(7, "clustering recovery")
def test_two_pair_recovered_for_every_seed(exact_corrs, measured):
    planted = Partition(6, ((0, 1), (2, 3), (4,), (5,)))
    hits = sum(
        cluster_qubits(exact_corrs["two_pair_clusters_n6"], ClusteringConfig(c_max=2, n_runs=10, seed=s)) == planted
        for s in range(100)
    )
    measured(f"{hits}/100 seeds")
    assert hits == 100


@acc(7, "clustering recovery")
def test_size_cap_respected(exact_corrs):
    rng = np.random.default_rng(90)
    mats = list(exact_corrs.values()) + [rng.random((8, 8)) for _ in range(20)]
    for v in mats:
        for c_max in (1, 2, 3):
            assert cluster_qubits(v, ClusteringConfig(c_max=c_max, alpha=0.05, seed=1)).max_size <= c_max


@acc(7, "clustering recovery")
def test_permutation_equivariance_small_fixtures(exact_corrs):
    cfg = ClusteringConfig(c_max=2, n_runs=10, seed=0)
    for name, v in exact_corrs.items():
        n = v.shape[0]
        if n > 6:
            continue
        base = cluster_qubits(v, cfg)
        for perm in itertools.permutations(range(n)):
            inv = np.argsort(perm)
            assert cluster_qubits(v[np.ix_(inv, inv)], cfg) == base.relabel(list(perm))


# ---------------------------------------------------------------------------
# 8. mitigation benchmark

@acc(8, "mitigation benchmark")
def test_mitigation_benchmark(measured):
    t0 = time.perf_counter()
    device = planted_model_library("two_pair_clusters_n6")
    recs = sample_cn(device, generate_collection("DDOT", 6, 3000, 101), 1000, seed=102)
    corr = correlation_matrix_from_marginals(estimate_marginals(recs, 2), WC)
    part = cluster_qubits(corr, ClusteringConfig(c_max=2, alpha=0.1, seed=103))
    models = {"cn": reconstruct_cn(recs, part), "tpn": reconstruct_tpn(recs)}
    hams = random_hamiltonians(20, 6, seed=104)
    med = run_benchmark(models, hams, device, 10_000, seed=105).medians
    elapsed = time.perf_counter() - t0
    measured(f"medians est {med['dE_est']:.4f}, mit_cn {med['dE_mit_cn']:.4f}, "
             f"mit_tpn {med['dE_mit_tpn']:.4f}, {elapsed:.1f} s")
    assert med["dE_mit_cn"] <= med["dE_est"] / 5
    assert med["dE_mit_cn"] <= 0.8 * med["dE_mit_tpn"]
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 9. determinism

@acc(9, "pipeline determinism")
def test_pipeline_byte_identical(tmp_path, measured):
    import pathlib

    config = pathlib.Path(__file__).resolve().parent.parent / "demos" / "demo.json"
    runs = {}
    for label, threads in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / label
        assert main(["--threads", str(threads), "pipeline", "--config", str(config), "--outdir", str(out)]) == 0
        runs[label] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert runs["a"] == runs["b"] == runs["c"]
    report = runs["a"]["report.csv"].decode()
    measured(f"{len(runs['a'])} files identical")
    medians = dict(line[len("# median "):].split(" ", 1) for line in report.splitlines() if line.startswith("# median"))
    assert float(medians["dE_mit_cn"]) <= float(medians["dE_est"]) / 5
