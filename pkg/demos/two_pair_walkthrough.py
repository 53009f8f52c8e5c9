"""Walk through characterization and mitigation on a planted 6-qubit device.

The device has two correlated pairs, (0, 1) and (2, 3), and two independent
qubits. We pretend not to know that, recover it from DDOT data, and check
that the fitted model helps on energy estimation.

    python demos/two_pair_walkthrough.py
"""

import numpy as np

from qdotkit.bench import random_hamiltonians, run_benchmark
from qdotkit.circuits import ComplexityQuery, generate_collection, required_circuits_matrix_elements
from qdotkit.clustering import ClusteringConfig, cluster_qubits
from qdotkit.cn_model import reconstruct_cn, reconstruct_tpn
from qdotkit.correlations import correlation_matrix_from_marginals
from qdotkit.marginals import estimate_marginals
from qdotkit.simulate import planted_model_library, sample_cn

np.set_printoptions(precision=3, suppress=True)

device = planted_model_library("two_pair_clusters_n6")

# How many random circuits do we need so every 2-qubit matrix element is
# within 0.1 with 99% confidence? The count grows only logarithmically with
# the number of qubits.
for n in (6, 127):
    q = ComplexityQuery("DDOT", 2, n, 0.1, 0.01)
    print(f"N={n:3d}: {required_circuits_matrix_elements(q)} DDOT circuits")

# we use more than the minimum so the correlation map is clean
circuits = generate_collection("DDOT", 6, 3000, seed=1)
records = sample_cn(device, circuits, shots=1000, seed=2)
table = estimate_marginals(records, 2)
print("\nestimated noise on qubits (2, 3):")
print(table[(2, 3)].matrix.entries)

corr = correlation_matrix_from_marginals(table, "WC")
print(f"\ncorrelation coefficients c[j, i] (j affects i), radius {corr.epsilon:.3f}:")
print(corr.values)
print("edges above threshold:", [(j, i, round(v, 3)) for j, i, v in corr.edges()])

partition = cluster_qubits(corr, ClusteringConfig(c_max=2, alpha=0.1, seed=3))
print("\nclusters:", partition.clusters)

cn = reconstruct_cn(records, partition)
tpn = reconstruct_tpn(records)

# Energies of random 2-local Hamiltonians on their ground states. The error
# columns are per qubit; the CN model should remove most of the readout error
# while the product model misses the pair correlations.
hams = random_hamiltonians(20, 6, seed=4)
report = run_benchmark({"cn": cn, "tpn": tpn}, hams, device, shots=10_000, seed=5)
print("\nmedian energy errors per qubit:")
for name, value in report.medians.items():
    print(f"  {name:11s} {value:.4f}")
