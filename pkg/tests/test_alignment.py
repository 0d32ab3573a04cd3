import math

import numpy as np
import pytest

from tfa.alignment import (
    SimilarityVector,
    TrainConfig,
    adam_init,
    adam_step,
    bce_loss,
    grad,
    init_relation,
    load_alignment,
    loss_and_grad,
    save_alignment,
    score_all,
    score_matrix,
    score_pair,
    train_alignment,
)
from tfa.embeddings import ClassPrototype
from tfa.errors import BadMagic, DimMismatch, EmptyTrainSet, ValidationError
from tfa.numerics import l2_normalize
from tfa.rng import Stream
from tfa.synth import SynthConfig, generate_synthetic

from helpers import central_difference_check, make_unit, ref_scalar_adam, ref_score_pair


# ---- initialization ----

def test_init_is_deterministic_per_seed():
    a = init_relation(8, seed=1, hidden=(6, 4))
    b = init_relation(8, seed=1, hidden=(6, 4))
    c = init_relation(8, seed=2, hidden=(6, 4))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))


def test_init_biases_zero_and_weights_bounded():
    p = init_relation(5, seed=9, hidden=(7, 3))
    for b in p.biases:
        assert np.all(b == 0.0)
    for w in p.weights:
        bound = math.sqrt(6.0 / w.shape[0])
        assert np.max(np.abs(w)) <= bound


def test_default_architecture_shape():
    p = init_relation(16, seed=0)
    assert p.layer_sizes() == [32, 2048, 1024, 1]


# ---- forward scoring ----

def test_zero_parameter_net_scores_half():
    p = init_relation(3, seed=0, hidden=(4, 2))
    for w in p.weights:
        w[:] = 0.0
    s, z = score_pair(p, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert s == 0.5 and z == 0.0


def test_score_is_strictly_inside_unit_interval():
    p = init_relation(6, seed=3, hidden=(8, 4))
    stream = Stream(11)
    for _ in range(20):
        s, _ = score_pair(p, make_unit(stream, 6), make_unit(stream, 6))
        assert 0.0 < s < 1.0


def test_score_pair_matches_loop_oracle_and_reference():
    params = init_relation(4, seed=42, hidden=(3, 2))
    v = l2_normalize([1.0, -2.0, 0.5, 0.25])
    e = l2_normalize([0.3, 0.3, -0.9, 1.1])
    s, z = score_pair(params, v, e)
    rs, rz = ref_score_pair(params, v, e)
    assert s == pytest.approx(rs, abs=1e-12)
    assert z == pytest.approx(rz, abs=1e-12)
    # frozen 64-bit reference values for cross-checking other implementations
    assert s == pytest.approx(0.619122426909387, abs=1e-9)
    assert z == pytest.approx(0.48582504187010556, abs=1e-9)


def test_score_pair_rejects_wrong_dimension():
    p = init_relation(4, seed=0, hidden=(3, 2))
    with pytest.raises(DimMismatch):
        score_pair(p, [1.0, 0.0], [0.0, 1.0, 0.0, 0.0])


def test_score_all_single_class_and_zero_net():
    p = init_relation(3, seed=0, hidden=(4, 2))
    for w in p.weights:
        w[:] = 0.0
    sim = score_all(p, [1.0, 0.0, 0.0], [ClassPrototype(5, np.eye(3)[1])])
    assert len(sim) == 1 and sim.class_ids.tolist() == [5]
    assert sim.scores[0] == 0.5


def test_score_all_is_per_class_independent():
    p = init_relation(5, seed=4, hidden=(6, 3))
    stream = Stream(2)
    protos = [ClassPrototype(i, make_unit(stream, 5)) for i in range(4)]
    v = make_unit(stream, 5)
    sim = score_all(p, v, protos)
    perm = [2, 0, 3, 1]
    sim_p = score_all(p, v, [protos[i] for i in perm])
    # un-permute and compare
    restored = np.empty_like(sim.logits)
    for out_pos, orig_pos in enumerate(perm):
        restored[orig_pos] = sim_p.logits[out_pos]
    np.testing.assert_allclose(restored, sim.logits, atol=0)


def test_score_matrix_agrees_with_score_pair():
    p = init_relation(6, seed=8, hidden=(10, 5))
    stream = Stream(3)
    vs = np.vstack([make_unit(stream, 6) for _ in range(3)])
    es = np.vstack([make_unit(stream, 6) for _ in range(4)])
    table = score_matrix(p, vs, es)
    for i in range(3):
        for j in range(4):
            _, z = score_pair(p, vs[i], es[j])
            assert table[i, j] == pytest.approx(z, abs=1e-12)


def test_sigmoid_monotone_argmax_identity():
    sim = SimilarityVector.from_logits([0.3, -2.0, 5.1, 0.2])
    assert int(np.argmax(sim.scores)) == int(np.argmax(sim.logits))


# ---- loss ----

def test_bce_uniform_scores_is_ln2():
    for c in (1, 2, 7):
        sim = SimilarityVector.from_logits(np.zeros(c))
        assert bce_loss(sim, 0) == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_perfect_prediction_approaches_zero():
    sim = SimilarityVector.from_logits([40.0, -40.0, -40.0])
    assert bce_loss(sim, 0) < 1e-15


def test_bce_two_class_example():
    # -(ln 0.8 + ln 0.7) / 2, computed directly
    logits = np.log([0.8 / 0.2, 0.3 / 0.7])
    sim = SimilarityVector.from_logits(logits)
    assert bce_loss(sim, 0) == pytest.approx(0.28990924762647107, abs=1e-9)


def test_bce_is_permutation_invariant_under_relabeling():
    p = init_relation(5, seed=4, hidden=(6, 3))
    stream = Stream(6)
    protos = np.vstack([make_unit(stream, 5) for _ in range(4)])
    vs = np.vstack([make_unit(stream, 5) for _ in range(2)])
    targets = np.array([1, 3])
    base = loss_and_grad(p, vs, protos, targets)[0]
    perm = np.array([3, 1, 0, 2])
    inv = np.argsort(perm)
    shuffled = loss_and_grad(p, vs, protos[perm], inv[targets])[0]
    assert shuffled == pytest.approx(base, abs=1e-12)


# ---- gradients ----

def _zero_loss_params():
    # m=1, hidden (1,1); one sample v=[1] with prototypes e0=[1], e1=[-1],
    # target class 0: logits come out at +/-45, so the loss is ~e^-45.
    p = init_relation(1, seed=0, hidden=(1, 1))
    p.weights[0][:, 0] = [0.0, 1.0]   # z1 = e
    p.weights[1][:, 0] = [1.0]
    w = 90.0 / 1.0001
    p.weights[2][:, 0] = [w]
    p.biases[2][0] = 45.0 - w
    return p


def test_zero_loss_configuration_is_stationary():
    p = _zero_loss_params()
    vs = np.array([[1.0]])
    protos = np.array([[1.0], [-1.0]])
    loss, g = loss_and_grad(p, vs, protos, np.array([0]))
    assert loss < 1e-15
    assert g.norm() <= 1e-9


def test_duplicating_the_batch_keeps_the_mean_gradient():
    p = init_relation(4, seed=5, hidden=(5, 3))
    stream = Stream(9)
    vs = np.vstack([make_unit(stream, 4) for _ in range(3)])
    protos = np.vstack([make_unit(stream, 4) for _ in range(3)])
    targets = np.array([0, 2, 1])
    g1 = grad(p, vs, protos, targets)
    g2 = grad(p, np.vstack([vs, vs]), protos, np.concatenate([targets, targets]))
    for a, b in zip((*g1.d_weights, *g1.d_biases), (*g2.d_weights, *g2.d_biases)):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_gradient_matches_central_differences_small():
    stream = Stream(21)
    for draw in range(5):
        p = init_relation(6, seed=100 + draw, hidden=(8, 5))
        for b in p.biases:
            b += 0.1 * stream.normal(b.shape[0])
        vs = np.vstack([make_unit(stream, 6) for _ in range(2)])
        protos = np.vstack([make_unit(stream, 6) for _ in range(3)])
        targets = (stream.words(2) % 3).astype(np.int64)
        central_difference_check(p, vs, protos, targets, h=1e-5, rtol=1e-4)


# ---- Adam ----

def test_adam_zero_gradient_is_a_no_op():
    p = init_relation(3, seed=7, hidden=(4, 2))
    before = [w.copy() for w in p.weights]
    state = adam_init(p)
    zeros = grad_like_zero(p)
    adam_step(p, state, zeros)
    for w, b in zip(p.weights, before):
        np.testing.assert_array_equal(w, b)


def grad_like_zero(p):
    from tfa.alignment import Gradients
    return Gradients([np.zeros_like(w) for w in p.weights],
                     [np.zeros_like(b) for b in p.biases])


def test_adam_first_step_magnitude():
    p = init_relation(2, seed=1, hidden=(3, 2))
    state = adam_init(p, lr=0.01)
    g = grad_like_zero(p)
    g.d_weights[0][0, 0] = 0.37
    before = p.weights[0][0, 0]
    adam_step(p, state, g)
    step = before - p.weights[0][0, 0]
    expected = 0.01 * 0.37 / (abs(0.37) + state.epsilon)
    assert step == pytest.approx(expected, abs=1e-15)
    assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_matches_scalar_oracle_on_quadratic():
    # embed a 1-D quadratic in one weight coordinate, zero gradients elsewhere
    p = init_relation(1, seed=3, hidden=(1,))
    p.weights[0][:] = 0.0
    p.weights[1][:] = 0.0
    x0 = 1.7
    p.weights[0][0, 0] = x0
    state = adam_init(p, lr=0.1)
    traj = []
    for _ in range(2):
        g = grad_like_zero(p)
        g.d_weights[0][0, 0] = 2.0 * p.weights[0][0, 0]
        adam_step(p, state, g)
        traj.append(float(p.weights[0][0, 0]))
    ref = ref_scalar_adam(x0, lambda x: 2.0 * x, 0.1, state.beta1, state.beta2,
                          state.epsilon, 2)
    np.testing.assert_allclose(traj, ref, rtol=0, atol=1e-12)
    assert float(np.abs(p.weights[0]).sum()) == pytest.approx(abs(traj[-1]), abs=1e-12)


def test_adam_refuses_frozen_params():
    p = init_relation(2, seed=1, hidden=(2,)).freeze()
    with pytest.raises(ValidationError):
        adam_step(p, adam_init(p), grad_like_zero(p))


# ---- training ----

def _base_task_data(m=64, classes=10, per_class=20, sigma=0.0, seed=5):
    cfg = SynthConfig(dim=m, base_classes=classes, novel_tasks=1,
                      classes_per_novel_task=1, train_per_base_class=per_class,
                      test_per_class=10, shots=1, intra_class_sigma=sigma,
                      modality_gap_sigma=0.0, seed=seed)
    data, protos = generate_synthetic(cfg)
    base = data.subset(data.indices(task=0))
    return base, [p for p in protos if p.class_id < classes]


def test_training_reduces_loss_and_freezes():
    base, protos = _base_task_data()
    train = base.subset(base.indices(split="train"))
    hyper = TrainConfig(epochs=6, batch_size=25, lr=0.001, seed=2, hidden=(128, 64))
    params = init_relation(64, hyper.seed, hyper.hidden)
    trained, history = train_alignment(params, train, protos, hyper)
    assert history[-1] < history[0]
    assert trained.frozen
    assert not trained.weights[0].flags.writeable


def test_training_is_deterministic():
    base, protos = _base_task_data(m=16, classes=4, per_class=8)
    train = base.subset(base.indices(split="train"))
    hyper = TrainConfig(epochs=2, batch_size=5, seed=3, hidden=(12, 6))
    t1, h1 = train_alignment(init_relation(16, 3, (12, 6)), train, protos, hyper)
    t2, h2 = train_alignment(init_relation(16, 3, (12, 6)), train, protos, hyper)
    assert h1 == h2
    for a, b in zip(t1.weights, t2.weights):
        np.testing.assert_array_equal(a, b)


def test_trained_scorer_classifies_separable_base_task():
    base, protos = _base_task_data(m=64, classes=10, per_class=20, sigma=0.0)
    train = base.subset(base.indices(split="train"))
    hyper = TrainConfig(epochs=10, batch_size=25, lr=0.001, seed=2, hidden=(128, 64))
    trained, _ = train_alignment(init_relation(64, 2, (128, 64)), train, protos, hyper)
    test_idx = base.indices(split="test")
    correct = 0
    for i in test_idx:
        sim = score_all(trained, base.vectors[i], protos)
        pred = int(sim.class_ids[int(np.argmax(sim.scores))])
        correct += pred == int(base.labels[i])
    assert correct / len(test_idx) >= 0.99


def test_training_rejects_bad_inputs():
    base, protos = _base_task_data(m=16, classes=4, per_class=8)
    empty = base.subset([])
    with pytest.raises(EmptyTrainSet):
        train_alignment(init_relation(16, 0, (4, 2)), empty, protos)
    with_test_split = base  # contains test records
    with pytest.raises(ValidationError):
        train_alignment(init_relation(16, 0, (4, 2)), with_test_split, protos)


# ---- checkpoints ----

def test_checkpoint_round_trip(tmp_path):
    p = init_relation(4, seed=6, hidden=(5, 3))
    path = tmp_path / "scorer.aln"
    save_alignment(p, path, train_config=TrainConfig(hidden=(5, 3)), final_loss=0.123)
    back, meta = load_alignment(path)
    assert back.frozen and back.m == 4
    assert meta["final_loss"] == 0.123
    for a, b in zip(p.weights, back.weights):
        np.testing.assert_array_equal(a.astype("<f4"), b.astype("<f4"))
    # byte-deterministic output
    save_alignment(p, tmp_path / "again.aln")
    save_alignment(p, tmp_path / "again2.aln")
    assert (tmp_path / "again.aln").read_bytes() == (tmp_path / "again2.aln").read_bytes()


def test_checkpoint_binary_layout_is_exact(tmp_path):
    import struct
    p = init_relation(2, seed=4, hidden=(3,))
    path = tmp_path / "layout.aln"
    save_alignment(p, path)
    blob = path.read_bytes()
    assert blob[:4] == b"ALN1"
    assert struct.unpack("<I", blob[4:8]) == (2,)  # layer count
    rows, cols = struct.unpack("<II", blob[8:16])
    assert (rows, cols) == (4, 3)
    w0 = np.frombuffer(blob, dtype="<f4", count=12, offset=16).reshape(4, 3)
    np.testing.assert_array_equal(w0, p.weights[0].astype("<f4"))
    b0 = np.frombuffer(blob, dtype="<f4", count=3, offset=16 + 48)
    np.testing.assert_array_equal(b0, p.biases[0].astype("<f4"))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "x.aln"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(BadMagic):
        load_alignment(path)
    p = init_relation(3, seed=1, hidden=(2,))
    good = tmp_path / "y.aln"
    save_alignment(p, good)
    blob = good.read_bytes()
    good.write_bytes(blob[:-3])
    with pytest.raises(DimMismatch):
        load_alignment(good)
