import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from boundary_rl.critic import (BACKWARD, BENCHMARK_BASES, FORWARD, BasisSet, CorruptWeightsError,
                                CriticWeights, basis_from_terms, eval_basis, eval_basis_gradient,
                                eval_value, load_weights, policy_from_weights, save_weights,
                                weights_from_record, weights_record)

SQRT2 = math.sqrt(2.0)
MANIP = BENCHMARK_BASES["manipulator"]


def test_eval_basis_examples():
    assert eval_basis(BENCHMARK_BASES["cubic"], [2.0]).tolist() == [4.0, 16.0]
    assert eval_basis(MANIP, [1.0, 2.0]).tolist() == [1, 2, 4, 1, 2, 4, 8]
    for b in BENCHMARK_BASES.values():
        assert not np.any(eval_basis(b, np.zeros(b.n)))


def test_gradient_examples():
    assert eval_basis_gradient(BENCHMARK_BASES["rl_circuit"], [3.0]).tolist() == [[6.0]]
    assert eval_basis_gradient(basis_from_terms([(1, 1)]), [2.5, -4.0]).tolist() == [[-4.0, 2.5]]
    for b in BENCHMARK_BASES.values():
        assert not np.any(eval_basis_gradient(b, np.zeros(b.n)))


@pytest.mark.parametrize("name", sorted(BENCHMARK_BASES))
def test_gradient_matches_central_differences(name):
    b = BENCHMARK_BASES[name]
    rng = np.random.default_rng(1)
    h = 1e-6
    for x in rng.uniform(-2, 2, size=(100, b.n)):
        fd = np.empty((b.N, b.n))
        for j in range(b.n):
            e = np.zeros(b.n)
            e[j] = h
            fd[:, j] = (eval_basis(b, x + e) - eval_basis(b, x - e)) / (2 * h)
        an = eval_basis_gradient(b, x)
        assert np.max(np.abs(fd - an)) <= 1e-6 * max(1.0, np.max(np.abs(an)))


def test_eval_value_examples():
    b = BENCHMARK_BASES["rl_circuit"]
    assert eval_value(b, CriticWeights([0.41]), [1.0]) == pytest.approx(0.41)
    assert eval_value(b, CriticWeights([SQRT2 - 1]), [2.0]) == pytest.approx(1.65685, abs=1e-5)
    assert eval_value(MANIP, CriticWeights(np.zeros(7)), [0.3, -1.0]) == 0.0


def test_policy_examples(circuit):
    b, g = BENCHMARK_BASES["rl_circuit"], circuit.system.learner_view().input_map
    u = policy_from_weights(g, circuit.cost, b, CriticWeights([SQRT2 - 1], FORWARD))
    assert u([0.5])[0] == pytest.approx(-0.20711, abs=1e-5)
    ub = policy_from_weights(g, circuit.cost, b, CriticWeights([1 + SQRT2], BACKWARD))
    assert ub([1.0])[0] == pytest.approx(1 + SQRT2)
    # reverse-time closed loop dx/ds = -(f + g u) = x - (1 + sqrt2) x
    assert -(-1.0 + ub([1.0])[0]) == pytest.approx(-SQRT2)


@given(arrays(float, 7, elements=st.floats(-50, 50)), st.sampled_from([FORWARD, BACKWARD]))
def test_policy_vanishes_at_origin(w, d):
    from boundary_rl.dynamics import make_benchmark
    p = make_benchmark("manipulator")
    u = policy_from_weights(p.system.input_map, p.cost, MANIP, CriticWeights(w, d))
    assert np.all(u(np.zeros(2)) == 0)


@given(arrays(float, 7, elements=st.floats(-50, 50)),
       arrays(float, 2, elements=st.floats(-2, 2)))
def test_direction_flip_negates_policy(w, x):
    from boundary_rl.dynamics import make_benchmark
    p = make_benchmark("manipulator")
    uf = policy_from_weights(p.system.input_map, p.cost, MANIP, CriticWeights(w, FORWARD))
    ub = policy_from_weights(p.system.input_map, p.cost, MANIP, CriticWeights(-w, BACKWARD))
    np.testing.assert_allclose(uf(x), ub(x), rtol=0, atol=0)


def test_basis_validation():
    with pytest.raises(ValueError):
        BasisSet(((1,),))
    with pytest.raises(ValueError):
        BasisSet(((2,), (2,)))
    with pytest.raises(ValueError):
        BasisSet(((2, 0), (3,)))
    with pytest.raises(ValueError):
        BasisSet(())
    assert MANIP.label(4) == "x1^2*x2"
    with pytest.raises(ValueError):
        CriticWeights([np.inf])
    with pytest.raises(ValueError):
        eval_value(MANIP, CriticWeights([1.0]), [0, 0])


@given(arrays(float, 7, elements=st.floats(-1e6, 1e6)), st.sampled_from([FORWARD, BACKWARD]))
def test_weights_record_round_trip(w, d):
    rec = weights_record(MANIP, CriticWeights(w, d), "manipulator", "abc")
    back = weights_from_record(json.loads(json.dumps(rec)))
    assert back[0] == MANIP
    np.testing.assert_array_equal(back[1].w, w)
    assert back[1].direction == d and back[2:] == ("manipulator", "abc")


def test_weight_files(tmp_path):
    path = tmp_path / "w.json"
    save_weights(path, MANIP, CriticWeights(np.arange(7.0), BACKWARD), "manipulator", "h")
    basis, w, bench, h = load_weights(path)
    assert basis == MANIP and w.w.tolist() == list(range(7)) and bench == "manipulator"
    path.write_text("{not json")
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
    path.write_text(json.dumps({"direction": "forward", "basis_terms": [[2]], "w": [1, 2]}))
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
    path.write_text("[1, 2]")
    with pytest.raises(CorruptWeightsError):
        load_weights(path)
