"""Decompose the 14-bus specification matrices into measurement groups.

Prints each group's XOR offset, the gates of its measurement circuit and how
many specifications it contributes to, then checks the reconstruction and one
objective evaluation against the dense matrices.
"""
import numpy as np

from qpflow.case_ingest import builtin_case
from qpflow.grid_model import build_specs
from qpflow.qsim import StateVector
from qpflow.xbm import decompose, measure_F_s, measure_G, measure_G_tilde

specs = build_specs(builtin_case("case14"))
dec = decompose(specs)
print(f"N={specs.n_buses} S={specs.s_count} qubits={specs.n_qubits} groups C={dec.c}")
for g in dec.groups:
    gates = " ".join(f"{x.kind}{x.target}" if x.control is None else f"CX{x.control}{x.target}" for x in g.circuit.gates)
    used = int(np.sum(np.any(g.lambdas != 0, axis=1)))
    print(f"  d={g.offset:>2} {g.part:<8} [{gates or 'identity'}]  specs touched: {used}")

err = max(np.abs(dec.reconstruct(s) - specs.h[s]).max() for s in range(specs.s_count))
print(f"largest reconstruction error: {err:.1e}")

rng = np.random.default_rng(0)
psi = rng.normal(size=16) + 1j * rng.normal(size=16)
psi /= np.linalg.norm(psi)
state = StateVector(psi, 4)
dense = np.einsum("i,sij,j->s", psi.conj(), specs.h, psi).real
print(f"F_s via groups vs dense: {np.abs(measure_F_s(state, dec) - dense).max():.1e}")
print(f"G  = {measure_G(state, dec, specs.b):.6f}   (dense {dense @ specs.b:.6f})")
print(f"Gt = {measure_G_tilde(state, dec):.6f}   (dense {dense @ dense:.6f})")
shots = measure_F_s(state, dec, shots=100_000, seed=1)
print(f"F_s from 1e5 shots, largest deviation: {np.abs(shots - dense).max():.2e}")
