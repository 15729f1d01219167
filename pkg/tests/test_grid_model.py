import dataclasses
import json

import numpy as np
import pytest

from qpflow.case_ingest import BranchRecord, BusRecord, CaseData
from qpflow.grid_model import (batch_from_csv, batch_to_csv, build_specs, build_ybus, flat_start, nmae,
                               padded_size, sample_instances, solve_newton_raphson, specset_to_json)

from conftest import random_state


def dense_ybus_oracle(case):
    """Connection-matrix assembly: Y = Cf^T Yf + Ct^T Yt + diag(Ysh)."""
    idx = case.bus_index()
    n, m = case.n_buses, len(case.branches)
    cf = np.zeros((m, n))
    ct = np.zeros((m, n))
    yff, yft, ytf, ytt = (np.zeros(m, complex) for _ in range(4))
    for k, br in enumerate(case.branches):
        cf[k, idx[br.from_bus]] = 1
        ct[k, idx[br.to_bus]] = 1
        z = br.r + 1j * br.x
        a = br.tap * np.exp(1j * br.shift)
        ytt[k] = 1 / z + 1j * br.b_charge / 2
        yff[k] = ytt[k] / abs(a) ** 2
        yft[k] = -(1 / z) / np.conj(a)
        ytf[k] = -(1 / z) / a
    yf = np.diag(yff) @ cf + np.diag(yft) @ ct
    yt = np.diag(ytf) @ cf + np.diag(ytt) @ ct
    ysh = np.array([b.shunt_gs + 1j * b.shunt_bs for b in case.buses])
    return cf.T @ yf + ct.T @ yt + np.diag(ysh)


def polar_injections(y, v):
    """Scalar textbook formulas P_n, Q_n in polar coordinates."""
    g, b = y.real, y.imag
    vm, va = np.abs(v), np.angle(v)
    n = len(v)
    p, q = np.zeros(n), np.zeros(n)
    for i in range(n):
        for k in range(n):
            d = va[i] - va[k]
            p[i] += vm[i] * vm[k] * (g[i, k] * np.cos(d) + b[i, k] * np.sin(d))
            q[i] += vm[i] * vm[k] * (g[i, k] * np.sin(d) - b[i, k] * np.cos(d))
    return p, q


def two_bus(x=0.1, bs=0.0):
    buses = (BusRecord(1, "slack", 0, 0, 0, 0, 1.0), BusRecord(2, "pq", 0.1, 0, 0, bs, 1.0))
    return CaseData(100.0, buses, (), (BranchRecord(1, 2, 0.0, x, 0.0),))


def test_two_bus_ybus():
    y = build_ybus(two_bus())
    np.testing.assert_allclose(y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_shunt_adds_to_diagonal():
    base = build_ybus(two_bus())
    with_shunt = build_ybus(two_bus(bs=0.05))
    assert with_shunt[1, 1] - base[1, 1] == pytest.approx(0.05j)
    assert with_shunt[0, 0] == base[0, 0]


def test_ybus_matches_connection_matrix_oracle(case14):
    np.testing.assert_allclose(build_ybus(case14), dense_ybus_oracle(case14), rtol=0, atol=1e-12)


def test_ybus_symmetric_without_phase_shifters(case14):
    y = build_ybus(case14)
    assert np.max(np.abs(y - y.T)) < 1e-12


def test_isolated_bus_warns():
    case = dataclasses.replace(two_bus(), branches=())
    with pytest.warns(UserWarning, match="isolated"):
        build_ybus(case)


def test_spec_layout_case14(specs14):
    assert specs14.s_count == 27
    assert specs14.n_pad == 16 and specs14.n_qubits == 4
    kinds = [k for k, _ in specs14.kinds]
    assert kinds.count("vmag_sq") == 5
    assert kinds.count("p_inj") == 13
    assert kinds.count("q_inj") == 9
    assert specs14.kinds[0] == ("vmag_sq", 1)
    assert specs14.kinds[1:3] == (("p_inj", 2), ("vmag_sq", 2))


def test_spec_values_case14(specs14):
    b = dict(zip(specs14.kinds, specs14.b))
    assert b[("vmag_sq", 1)] == pytest.approx(1.06 ** 2)
    assert b[("p_inj", 2)] == pytest.approx(0.40 - 0.217)
    assert b[("q_inj", 4)] == pytest.approx(0.039)
    assert b[("p_inj", 7)] == 0.0


def test_specs_hermitian_and_padded(specs14):
    h = specs14.h
    assert np.max(np.abs(h - h.conj().transpose(0, 2, 1))) < 1e-12
    assert not np.any(h[:, 14:, :]) and not np.any(h[:, :, 14:])


def test_vmag_matrix_is_unit_diagonal(specs14):
    for s, (kind, bus) in enumerate(specs14.kinds):
        if kind == "vmag_sq":
            k = specs14.bus_ids.index(bus)
            expected = np.zeros((16, 16))
            expected[k, k] = 1
            np.testing.assert_array_equal(specs14.h[s], expected)


def test_vmag_quadratic_example(case2):
    specs = build_specs(case2)
    v = np.array([1, 2j])
    vals = specs.values(v)
    assert specs.kinds[0] == ("vmag_sq", 1)
    assert vals[0] == pytest.approx(1.0)
    # second bus is pq; its magnitude is |2j|^2 through the identity quadratic
    e = np.zeros((2, 2))
    e[1, 1] = 1
    assert np.vdot(v, e @ v).real == pytest.approx(4.0)


def test_two_bus_fixture_spec_count(case2):
    assert build_specs(case2).s_count == 3


def test_quadratics_match_scalar_formulas(specs14, rng):
    y = specs14.y
    for _ in range(1000):
        v = rng.normal(1, 0.1, 14) * np.exp(1j * rng.normal(0, 0.3, 14))
        p, q = polar_injections(y, v) if _ < 20 else (None, None)
        vals = specs14.values(v)
        s_inj = v * np.conj(y @ v)
        for s, (kind, bus) in enumerate(specs14.kinds):
            k = specs14.bus_ids.index(bus)
            expected = {"p_inj": s_inj[k].real, "q_inj": s_inj[k].imag, "vmag_sq": abs(v[k]) ** 2}[kind]
            assert abs(vals[s] - expected) < 1e-10
            if p is not None and kind != "vmag_sq":
                assert abs(vals[s] - (p[k] if kind == "p_inj" else q[k])) < 1e-10


def test_active_injection_quadratic(specs14, rng):
    y = specs14.y
    v = random_state(rng, 4)[:14] * 3
    for s, (kind, bus) in enumerate(specs14.kinds):
        if kind != "p_inj":
            continue
        n = specs14.bus_ids.index(bus)
        direct = (v[n] * np.conj(np.sum(y[n] * v))).real
        assert abs(specs14.values(v)[s] - direct) < 1e-12


def test_specset_json(specs14):
    doc = json.loads(specset_to_json(specs14))
    assert doc["n_pad"] == 16 and len(doc["b"]) == 27
    h = np.array(doc["h"])
    np.testing.assert_allclose(h[..., 0] + 1j * h[..., 1], specs14.h)


def test_padded_size():
    assert [padded_size(n) for n in (1, 2, 3, 4, 5, 14, 16, 17)] == [1, 2, 4, 4, 8, 16, 16, 32]


# -- instances


def test_zero_noise_reproduces_base(specs14):
    batch = sample_instances(specs14, 5, seed=3, sigma_v=0.0, sigma_p_frac=0.0)
    np.testing.assert_allclose(batch.instances, np.tile(specs14.b, (5, 1)), atol=1e-15)


def test_sampling_is_seeded(specs14):
    a = sample_instances(specs14, 10, seed=11)
    b = sample_instances(specs14, 10, seed=11)
    c = sample_instances(specs14, 10, seed=12)
    np.testing.assert_array_equal(a.instances, b.instances)
    assert not np.array_equal(a.instances, c.instances)


def test_sample_statistics(specs14):
    """Injections are unbiased; perturbed voltage magnitudes are unbiased before squaring."""
    t = 100_000
    batch = sample_instances(specs14, t, seed=5, screen=False)
    x = batch.instances
    is_v = specs14.kind_mask("vmag_sq")
    base = specs14.b
    inj = ~is_v & (base != 0)
    se = 0.2 * np.abs(base[inj]) / np.sqrt(t)
    assert np.all(np.abs(x[:, inj].mean(axis=0) - base[inj]) < 3 * se)
    mags = np.sqrt(x[:, is_v])
    assert np.all(np.abs(mags.mean(axis=0) - np.sqrt(base[is_v])) < 3 * 0.05 / np.sqrt(t))
    assert np.all(x[:, base == 0] == 0)
    np.testing.assert_allclose(mags.std(axis=0), 0.05, rtol=0.02)


def test_train_test_split(specs14):
    batch = sample_instances(specs14, 100, seed=0)
    train, test = batch.split(80)
    assert len(train) == 80 and len(test) == 20
    assert train.instances.shape[1] == test.instances.shape[1] == 27


def test_screened_instances_are_solvable(specs14):
    batch = sample_instances(specs14, 20, seed=1)
    assert all(solve_newton_raphson(specs14, b).converged for b in batch.instances)


def test_instance_csv_round_trip(specs14):
    batch = sample_instances(specs14, 4, seed=2)
    text = batch_to_csv(batch, specs14)
    header = text.splitlines()[0].split(",")
    assert header[:3] == ["vmag_sq_1", "p_inj_2", "vmag_sq_2"]
    np.testing.assert_array_equal(batch_from_csv(text).instances, batch.instances)


def test_sample_requires_positive_count(specs14):
    with pytest.raises(ValueError):
        sample_instances(specs14, 0, seed=0)


# -- Newton-Raphson


def test_nr_nominal_flat_start(specs14):
    sol = solve_newton_raphson(specs14, specs14.b)
    assert sol.converged
    assert np.max(np.abs(specs14.values(sol.v) - specs14.b)) < 1e-8
    assert np.angle(sol.v[0]) == 0
    # published case14 solution, bus 14 magnitude and angle
    assert abs(sol.v[13]) == pytest.approx(1.036, abs=1e-3)
    assert np.degrees(np.angle(sol.v[13])) == pytest.approx(-16.03, abs=0.02)


def test_nr_fixed_point(specs14, rng):
    v_star = solve_newton_raphson(specs14, specs14.b).v * np.exp(0.7j)
    b = specs14.values(v_star)
    sol = solve_newton_raphson(specs14, b, v0=v_star)
    assert sol.converged and sol.iterations <= 2
    # phase-aligned solution equals the rotated start
    np.testing.assert_allclose(sol.v, v_star * np.exp(-0.7j), atol=1e-9)


def test_nr_reproduces_b_on_perturbed_instances(specs14):
    batch = sample_instances(specs14, 5, seed=9)
    for b in batch.instances:
        sol = solve_newton_raphson(specs14, b)
        assert sol.converged
        assert np.max(np.abs(specs14.values(sol.v) - b)) < 1e-8
        assert nmae(specs14.values(sol.v), b) < 1e-8


def test_nr_flags_infeasible_instance(specs14):
    b = specs14.b.copy()
    b[~specs14.kind_mask("vmag_sq")] *= 100
    sol = solve_newton_raphson(specs14, b)
    assert sol.converged is False


def test_nr_rejects_zero_start(specs14):
    with pytest.raises(ValueError):
        solve_newton_raphson(specs14, specs14.b, v0=np.zeros(14))


def test_flat_start_uses_setpoints(specs14):
    v = flat_start(specs14)
    assert v[0] == 1.06 and v[3] == 1.0


# -- NMAE


@pytest.mark.parametrize("b_hat, b, expected", [
    ([1.0, 3.0], [1.0, 3.0], 0.0),
    ([2.0, 6.0], [1.0, 3.0], 1.0),
    ([1.0, 1.0], [1.0, 3.0], 0.5),
])
def test_nmae_examples(b_hat, b, expected):
    assert nmae(np.array(b_hat), np.array(b)) == pytest.approx(expected)


def test_nmae_zero_reference():
    with pytest.raises(ValueError):
        nmae(np.ones(2), np.zeros(2))


def test_nmae_shape_mismatch():
    with pytest.raises(ValueError):
        nmae(np.ones(2), np.ones(3))
