import numpy as np
import pytest
from scipy.stats import chi2_contingency

from qdotkit.circuits import CircuitCollection, circuit_rng, generate_collection
from qdotkit.povm import Povm, StochasticMatrix, ValidationError, ideal_povm, ket_to_dm
from qdotkit.simulate import (
    Cluster,
    CnModel,
    ExperimentRecords,
    PLANTED_MODELS,
    QuantumBlock,
    QuantumDeviceSpec,
    Record,
    UnsupportedProtocolError,
    conditional_pair_matrix,
    flip_matrix,
    identity_model,
    planted_model_library,
    sample_cn,
    sample_counts,
    sample_quantum,
)

XPOVM = Povm(np.stack([ket_to_dm([1, 1]), ket_to_dm([1, -1])]))


def single_setting(setting, repeats=1):
    return CircuitCollection("DDOT", len(setting), (setting,) * repeats)


def test_identity_noise():
    c = generate_collection("DDOT", 5, 30, 1)
    recs = sample_cn(identity_model(5), c, 50, seed=0)
    for r in recs.records:
        assert r.counts == {r.setting: 50}


def test_single_flip_frequency():
    model = CnModel(1, (Cluster((0,), (), {"": flip_matrix(0.2)}),))
    rec = sample_cn(model, single_setting("0"), 100_000, seed=3).records[0]
    assert abs(rec.counts.get("1", 0) / 1e5 - 0.2) <= 0.006


def test_neighbor_conditioning():
    strong = conditional_pair_matrix(lambda a, b: 0.3, lambda a, b: 0.25, joint=0.1)
    model = CnModel(3, (
        Cluster((0, 1), (2,), {"0": np.eye(4), "1": strong}),
        Cluster((2,), (), {"": np.eye(2)}),
    ))
    rng = np.random.default_rng(0)
    for y2, lam in (("0", np.eye(4)), ("1", strong)):
        for y in range(4):
            setting = format(y, "02b") + y2
            counts = sample_counts(model, setting, 100_000, rng)
            freq = np.zeros(4)
            for key, v in counts.items():
                assert key[2] == y2
                freq[int(key[:2], 2)] += v / 1e5
            assert np.max(np.abs(freq - lam[:, y])) < 0.01


def test_cluster_validation():
    with pytest.raises(ValidationError):
        Cluster((0, 1), (1,), {"0": np.eye(4), "1": np.eye(4)})
    with pytest.raises(ValidationError):
        Cluster((0,), (1,), {"0": np.eye(2)})
    with pytest.raises(ValidationError):
        CnModel(3, (Cluster((0, 1), (), {"": np.eye(4)}), Cluster((1,), (), {"": np.eye(2)})))
    with pytest.raises(ValidationError):
        CnModel(3, (Cluster((0, 1), (), {"": np.eye(4)}),))


def test_qdot_refused():
    with pytest.raises(UnsupportedProtocolError, match="use sample_quantum"):
        sample_cn(identity_model(2), generate_collection("QDOT", 2, 3, 0), 10, seed=0)


def test_quantum_ideal_and_x_basis():
    spec = QuantumDeviceSpec((QuantumBlock((0, 1), ideal_povm(2)), QuantumBlock((2,), ideal_povm(1))))
    recs = sample_quantum(spec, generate_collection("DDOT", 3, 20, 4), 100, seed=1)
    assert all(r.counts == {r.setting: 100} for r in recs.records)
    xdev = QuantumDeviceSpec((QuantumBlock((0,), XPOVM),))
    rec = sample_quantum(xdev, CircuitCollection("QDOT", 1, ("2",)), 10_000, seed=1).records[0]
    assert rec.counts == {"0": 10_000}


def test_quantum_block_limits():
    with pytest.raises(ValidationError):
        QuantumDeviceSpec((QuantumBlock(tuple(range(4)), ideal_povm(4)),))
    with pytest.raises(ValidationError):
        QuantumDeviceSpec((QuantumBlock((0,), ideal_povm(1)), QuantumBlock((2,), ideal_povm(1))))


def test_quantum_matches_classical_chi_square():
    lam = flip_matrix(0.15, 0.3)
    cn = CnModel(1, (Cluster((0,), (), {"": lam}),))
    q = QuantumDeviceSpec((QuantumBlock((0,), StochasticMatrix(lam).to_povm()),))
    for s in ("0", "1"):
        a = sample_cn(cn, single_setting(s), 20_000, seed=5).records[0].counts
        b = sample_quantum(q, single_setting(s), 20_000, seed=6).records[0].counts
        table = [[a.get(k, 0) for k in "01"], [b.get(k, 0) for k in "01"]]
        assert chi2_contingency(table).pvalue > 0.001


def test_global_povm_ordering():
    lam = flip_matrix(0.1, 0.2)
    spec = QuantumDeviceSpec((QuantumBlock((1,), StochasticMatrix(lam).to_povm()), QuantumBlock((0,), ideal_povm(1))))
    g = spec.global_povm()
    # qubit 0 is the first factor, so the noisy factor is second
    expected = StochasticMatrix(np.kron(np.eye(2), lam)).to_povm()
    assert np.allclose(g.effects, expected.effects)


@pytest.mark.parametrize("name", sorted(PLANTED_MODELS))
def test_global_matrix_is_stochastic(name):
    lam = planted_model_library(name).global_matrix()
    assert np.all(lam >= 0)
    assert np.max(np.abs(lam.sum(axis=0) - 1)) < 1e-12


@pytest.mark.parametrize("name", sorted(PLANTED_MODELS))
def test_sampling_converges_to_global_columns(name):
    model = planted_model_library(name)
    n = model.num_qubits
    lam = model.global_matrix()
    rng = circuit_rng(9, 0, 1)
    shots = 40_000
    for y in rng.choice(2**n, size=4, replace=False):
        setting = format(int(y), f"0{n}b")
        counts = sample_counts(model, setting, shots, rng)
        freq = np.zeros(2**n)
        for key, v in counts.items():
            freq[int(key, 2)] = v / shots
        assert np.max(np.abs(freq - lam[:, y])) <= 5 / np.sqrt(shots)


def test_planted_structure():
    assert [c.qubits for c in planted_model_library("uncorrelated_n10").clusters] == [(i,) for i in range(10)]
    assert planted_model_library("two_pair_clusters_n6").partition() == [[0, 1], [2, 3], [4], [5]]
    chain = planted_model_library("neighbor_chain_n8")
    assert chain.clusters[0].qubits == (0, 1) and chain.clusters[0].neighborhood == (2,)
    with pytest.raises(ValidationError):
        planted_model_library("nope")


def test_seed_and_thread_determinism():
    model = planted_model_library("two_pair_clusters_n6")
    c = generate_collection("DDOT", 6, 200, 2)
    a = sample_cn(model, c, 300, seed=11, threads=1)
    b = sample_cn(model, c, 300, seed=11, threads=8)
    assert a.to_dict() == b.to_dict()
    assert sample_cn(model, c, 300, seed=12).to_dict() != a.to_dict()


def test_records_round_trip_and_validation():
    c = generate_collection("DDOT", 4, 10, 2)
    recs = sample_cn(planted_model_library("uncorrelated_n10"), generate_collection("DDOT", 10, 5, 0), 20, seed=1)
    assert ExperimentRecords.from_dict(recs.to_dict()).to_dict() == recs.to_dict()
    with pytest.raises(ValidationError):
        Record("01", 3, {"01": 2})
    with pytest.raises(ValidationError):
        ExperimentRecords("DDOT", 3, (Record("01", 1, {"01": 1}),))
    with pytest.raises(ValidationError):
        sample_cn(identity_model(3), c, 10, seed=0)


def test_model_round_trip():
    m = planted_model_library("neighbor_chain_n8")
    m2 = CnModel.from_dict(m.to_dict())
    assert np.array_equal(m2.global_matrix(), m.global_matrix())
