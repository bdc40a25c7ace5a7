import random

import pytest

import subnetcl


def test_topc_mask_basic():
    mask = subnetcl.topc_mask([[[0.9, 0.1, 0.5, 0.7]]], 50.0)
    assert mask == [[1, 0, 0, 1]]


def test_topc_mask_rejects_bad_capacity():
    with pytest.raises(subnetcl.ConfigError):
        subnetcl.topc_mask([[[0.9, 0.1]]], 0.0)


def test_accumulate_is_or():
    acc = subnetcl.accumulate_masks([[[1, 0, 0]], [[0, 0, 1]]], [(1, 3)])
    assert acc == [[1, 0, 1]]


def test_encode_roundtrip_bit_exact():
    rng = random.Random(7)
    shapes = [(4, 8), (8, 2)]
    tasks = [
        [[rng.randint(0, 1) for _ in range(r * c)] for (r, c) in shapes]
        for _ in range(5)
    ]
    back, info = subnetcl.encode_roundtrip(tasks, shapes)
    assert back == tasks
    assert info["num_tasks"] == 5
    assert info["payload_bits"] > 0


def test_capacity_report():
    tasks = [[[1, 1, 0, 0]], [[0, 1, 1, 0]]]
    cap = subnetcl.capacity(tasks, [(1, 4)])
    assert cap["sparsity"] == pytest.approx(0.25)
    assert 0.0 <= cap["cap_formula"] <= 2.0
    assert cap["cap_formula"] == pytest.approx(
        (1 - cap["sparsity"]) + (1 - cap["compression_rate"]) * 2 / 32
    )


def test_mask_correlation_jaccard():
    corr = subnetcl.mask_correlation([[[1, 1, 0, 0]], [[0, 1, 1, 0]]], [(1, 4)])
    assert corr[0][0] == pytest.approx(1.0)
    assert corr[0][1] == pytest.approx(1.0 / 3.0)
    assert corr[0][1] == corr[1][0]


def test_metrics_formulas():
    acc = {1: {1: 0.9, 2: 0.4}, 2: {1: 0.9, 2: 0.8}}
    out = subnetcl.metrics(acc, {2: 0.1}, 2)
    assert out["acc"] == pytest.approx(0.85)
    assert out["bwt"] == pytest.approx(0.0)
    assert out["fwt"] == pytest.approx(0.3)


def test_run_til_synth_is_forget_free_and_deterministic():
    a = subnetcl.run_til_synth(tasks=2, classes=3, dim=8, epochs=3, seed=11)
    b = subnetcl.run_til_synth(tasks=2, classes=3, dim=8, epochs=3, seed=11)
    assert not a["partial"]
    assert a["bwt"] == 0.0
    assert a["acc"] == b["acc"]
    assert a["capacity_curve"] == b["capacity_curve"]


def test_run_fscil_synth_smoke():
    out = subnetcl.run_fscil_synth(
        classes=6, base_classes=4, ways=1, shots=2, base_epochs=10, seed=5
    )
    assert len(out["session_accuracy"]) >= 2
    assert all(0.0 <= a <= 1.0 for a in out["session_accuracy"])
