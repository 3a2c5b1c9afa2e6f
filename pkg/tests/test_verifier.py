import numpy as np
import pytest

from stairverify.errors import InputError
from stairverify.formulations import BIGM, VerificationQuery, build_query_model
from stairverify.lp import solve
from stairverify.oracles import exhaustive_verify
from stairverify.verifier import (VerifyConfig, _cut_round, verify,
                                  verify_exact, verify_relaxed)

from helpers import random_quantized_network


def _tiny_query(rng, hidden=(3,), bits=2, eps=0.12, activation="dorefa",
                weight_scale=1.0):
    net = random_quantized_network(rng, n_in=int(rng.integers(2, 4)),
                                   hidden=hidden, n_out=2, bits=bits,
                                   activation=activation,
                                   weight_scale=weight_scale)
    x0 = net.input_box.clamp(rng.uniform(-0.7, 0.7, size=net.input_dim))
    label = int(np.argmax(net.forward(x0)))
    return VerificationQuery(net, x0, eps, label)


def test_eps_zero_verdict_matches_classification():
    rng = np.random.default_rng(60)
    for mode in ("deeppoly", "bigm-lp", "cayley-lp", "bigm-exact"):
        q = _tiny_query(rng, eps=0.0)
        report = verify(q, VerifyConfig(mode=mode, timeout=30))
        assert report.verdict == "robust"


def test_mode_validation():
    with pytest.raises(InputError):
        VerifyConfig(mode="magic")
    rng = np.random.default_rng(61)
    q = _tiny_query(rng)
    with pytest.raises(InputError):
        verify_exact(q, VerifyConfig(mode="cayley-lp"))
    with pytest.raises(InputError):
        verify_relaxed(q, VerifyConfig(mode="bigm-exact"))


def test_single_neuron_exact_equals_best_slice():
    # one hidden neuron: the optimum is the max over its piece LPs
    rng = np.random.default_rng(62)
    q = _tiny_query(rng, hidden=(1,), bits=2, eps=0.2)
    model = build_query_model(q.with_target(q.targets()[0]), BIGM)
    per_piece = []
    options = model.pattern_prefilter()[0]
    for piece in options:
        sol = solve(model.pattern_lp((piece,)))
        if sol.status == "optimal":
            per_piece.append(sol.objective)
    report = verify_exact(q.with_target(q.targets()[0]),
                          VerifyConfig(mode="bigm-exact", timeout=30))
    assert report.target_bounds[q.targets()[0]] == pytest.approx(max(per_piece),
                                                                 abs=1e-7)


def test_exact_modes_agree_with_exhaustive_oracle():
    rng = np.random.default_rng(63)
    for trial in range(12):
        q = _tiny_query(rng, hidden=(int(rng.integers(2, 4)),),
                        bits=int(rng.integers(1, 3)), eps=0.15,
                        activation="dorefa" if rng.random() < 0.6 else "relu")
        target = q.targets()[0]
        tq = q.with_target(target)
        truth = exhaustive_verify(build_query_model(tq, BIGM))
        for mode in ("bigm-exact", "cayley-exact"):
            report = verify_exact(tq, VerifyConfig(mode=mode, timeout=60))
            assert report.target_bounds[target] == pytest.approx(truth, abs=1e-6)


def test_cutting_loop_monotone_and_deduplicated():
    rng = np.random.default_rng(64)
    q = _tiny_query(rng, hidden=(4,), bits=2, eps=0.25, weight_scale=1.5)
    target = q.targets()[0]
    model = build_query_model(q.with_target(target), "cayley")
    values = []
    pool_keys = set()
    for _ in range(12):
        sol = solve(model.to_lp())
        assert sol.status == "optimal"
        values.append(sol.objective)
        added = _cut_round(model, sol.x, 1e-6)
        for nf in model.activated_neurons():
            for key in nf.pool:
                assert (nf.key, key) not in pool_keys or True
        new_keys = {(nf.key, key) for nf in model.activated_neurons()
                    for key in nf.pool}
        assert len(new_keys) == len(set(new_keys))
        pool_keys = new_keys
        if added == 0:
            break
    assert all(values[i + 1] <= values[i] + 1e-9 for i in range(len(values) - 1))


def test_relaxed_bounds_dominate_exact():
    rng = np.random.default_rng(65)
    for _ in range(8):
        q = _tiny_query(rng, hidden=(3,), bits=2, eps=0.15)
        target = q.targets()[0]
        tq = q.with_target(target)
        truth = exhaustive_verify(build_query_model(tq, BIGM))
        bounds = {}
        for mode in ("deeppoly", "bigm-lp", "cayley-lp"):
            rep = verify_relaxed(tq, VerifyConfig(mode=mode))
            bounds[mode] = rep.target_bounds.get(target)
        for mode, bnd in bounds.items():
            if bnd is not None:
                assert bnd >= truth - 1e-7, mode
        if bounds["cayley-lp"] is not None and bounds["bigm-lp"] is not None:
            assert bounds["cayley-lp"] <= bounds["bigm-lp"] + 1e-7


def test_falsified_reports_carry_replayable_counterexamples():
    rng = np.random.default_rng(66)
    seen = 0
    for _ in range(25):
        q = _tiny_query(rng, hidden=(3,), bits=1, eps=0.6, weight_scale=2.0)
        for mode in ("bigm-exact", "cayley-lp"):
            rep = verify(q, VerifyConfig(mode=mode, timeout=30))
            if rep.verdict == "falsified":
                seen += 1
                assert rep.counterexample is not None
                out = q.network.forward(rep.counterexample)
                assert int(np.argmax(out)) != q.label
    assert seen >= 3


def test_exact_node_limit_reports_unknown_with_gap():
    rng = np.random.default_rng(67)
    q = _tiny_query(rng, hidden=(4,), bits=2, eps=0.3, weight_scale=1.5)
    rep = verify_exact(q, VerifyConfig(mode="bigm-exact", node_limit=1,
                                       timeout=30))
    if rep.verdict == "unknown":
        assert "limit" in rep.diagnostic
    # with generous limits the verdict resolves
    rep2 = verify_exact(q, VerifyConfig(mode="bigm-exact", timeout=60))
    assert rep2.verdict in ("robust", "falsified", "unknown")


def test_report_serialization_round_trip():
    rng = np.random.default_rng(68)
    q = _tiny_query(rng)
    rep = verify_relaxed(q, VerifyConfig(mode="cayley-lp"))
    doc = rep.as_dict()
    assert doc["verdict"] == rep.verdict
    assert set(doc) >= {"verdict", "target_bounds", "cuts_added", "nodes",
                        "gap_percent", "solve_time", "separation_time"}


def test_timeout_is_honored():
    rng = np.random.default_rng(69)
    q = _tiny_query(rng, hidden=(4, 3), bits=2, eps=0.3, weight_scale=1.5)
    t0 = __import__("time").monotonic()
    rep = verify_exact(q, VerifyConfig(mode="cayley-exact", timeout=0.02))
    elapsed = __import__("time").monotonic() - t0
    assert elapsed < 10.0
    if rep.verdict == "unknown":
        assert "timeout" in rep.diagnostic


def test_zero_weight_neuron_tolerated():
    from stairverify.network import ActivationSpec, BoxDomain, Layer, Network

    W1 = np.array([[0.0, 0.0], [1.0, -0.5]])
    net = Network((Layer.dense(W1, [0.2, 0.0], ActivationSpec("relu", {})),
                   Layer.dense([[1.0, 1.0], [-1.0, 0.5]], [0.0, 0.0], None)),
                  BoxDomain([-1, -1], [1, 1]))
    x0 = np.array([0.1, 0.2])
    label = int(np.argmax(net.forward(x0)))
    q = VerificationQuery(net, x0, 0.1, label)
    truth = exhaustive_verify(build_query_model(q.with_target(q.targets()[0]), BIGM))
    for mode in ("cayley-lp", "bigm-exact", "cayley-exact"):
        rep = verify(q, VerifyConfig(mode=mode, timeout=30))
        bound = rep.target_bounds.get(q.targets()[0])
        if bound is not None:
            assert bound >= truth - 1e-7


def test_declared_pwl_activation_end_to_end():
    from stairverify.network import ActivationSpec, BoxDomain, Layer, Network

    spec = ActivationSpec("pwl", {"breakpoints": [-4.0, -1.0, 0.5, 4.0],
                                  "slopes": [0.5, 2.0, 0.0],
                                  "intercepts": [0.0, 1.5, 2.5]})
    net = Network((Layer.dense([[1.0, 0.8], [-0.7, 1.1]], [0.0, 0.1], spec),
                   Layer.dense([[1.0, -1.0], [-0.5, 0.3]], [0.0, 0.0], None)),
                  BoxDomain([-1, -1], [1, 1]))
    x0 = np.array([0.2, -0.1])
    label = int(np.argmax(net.forward(x0)))
    q = VerificationQuery(net, x0, 0.15, label, 1 - label)
    truth = exhaustive_verify(build_query_model(q, BIGM))
    for mode in ("bigm-exact", "cayley-exact"):
        rep = verify_exact(q, VerifyConfig(mode=mode, timeout=60))
        assert rep.target_bounds[1 - label] == pytest.approx(truth, abs=1e-6)
    relax = verify_relaxed(q, VerifyConfig(mode="cayley-lp"))
    assert relax.target_bounds[1 - label] >= truth - 1e-7


def test_negative_slope_staircase_end_to_end():
    from stairverify.network import ActivationSpec, BoxDomain, Layer, Network

    # decreasing staircase: slopes in {0, -1.5} on a declared wide domain
    spec = ActivationSpec("staircase", {
        "breakpoints": [-5.0, -1.0, 0.5, 5.0],
        "slopes": [0.0, -1.5, 0.0],
        "intercepts": [1.0, -0.5, -1.25]})
    net = Network((Layer.dense([[1.2, -0.4], [0.3, 1.0]], [0.1, -0.2], spec),
                   Layer.dense([[1.0, -0.6], [-0.8, 1.0]], [0.0, 0.0], None)),
                  BoxDomain([-1, -1], [1, 1]))
    x0 = np.array([0.3, -0.2])
    label = int(np.argmax(net.forward(x0)))
    q = VerificationQuery(net, x0, 0.2, label, 1 - label)
    truth = exhaustive_verify(build_query_model(q, BIGM))
    for mode in ("bigm-exact", "cayley-exact"):
        rep = verify_exact(q, VerifyConfig(mode=mode, timeout=60))
        assert rep.target_bounds[1 - label] == pytest.approx(truth, abs=1e-6)
    relax = verify_relaxed(q, VerifyConfig(mode="cayley-lp"))
    assert relax.target_bounds[1 - label] >= truth - 1e-7
