import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mft import numerics as nx
from mft.container import ContainerError, read_container
from mft.correction import CorrectionConfig, batch_correct, one_hot_targets
from mft.model import (ADAPTER_TARGETS, VOCAB_SIZE, AdapterConfig, TinyLMConfig, attach_adapter, clone_frozen,
                       count_params, init_model, load_checkpoint, param_hash, save_checkpoint)

SMALL = TinyLMConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, seq_len=24)


@pytest.fixture(scope="module")
def model():
    return init_model(SMALL, seed=3)


def test_logit_shape(model):
    out = model(np.zeros((2, 10), dtype=np.int64))
    assert out.shape == (2, 10, VOCAB_SIZE)
    assert model(np.arange(5)).shape == (1, 5, VOCAB_SIZE)


def test_init_is_deterministic():
    assert param_hash(init_model(SMALL, 9)) == param_hash(init_model(SMALL, 9))
    assert param_hash(init_model(SMALL, 9)) != param_hash(init_model(SMALL, 10))


def test_init_statistics():
    m = init_model(TinyLMConfig(), 0)
    w = m.params["layers.0.attn.q"].data
    assert abs(float(w.std()) - 0.02) < 1e-3
    assert not m.params["layers.0.ln1.b"].data.any()
    assert (m.params["ln_f.g"].data == 1).all()


def test_invalid_config():
    with pytest.raises(ValueError):
        TinyLMConfig(d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        TinyLMConfig(n_layers=0)


@settings(max_examples=25)
@given(st.integers(0, 22), st.integers(0, 255), st.integers(0, 2**32 - 1))
def test_causality_by_perturbation(model, t, new_token, seed):
    r = np.random.default_rng(seed)
    x = r.integers(0, VOCAB_SIZE, size=(1, 24))
    y = x.copy()
    y[0, t] = new_token
    a, b = model(x).data, model(y).data
    assert np.array_equal(a[:, :t], b[:, :t])


def test_forward_deterministic(model):
    x = np.random.default_rng(0).integers(0, 256, size=(3, 24))
    assert model(x).data.tobytes() == model(x).data.tobytes()


def test_forward_rejects_bad_tokens(model):
    with pytest.raises(ValueError):
        model(np.array([[0, VOCAB_SIZE]]))
    with pytest.raises(ValueError):
        model(np.array([[-1, 3]]))
    with pytest.raises(ValueError):
        model(np.zeros((1, 25), dtype=np.int64))


def test_entropy_near_uniform_at_init():
    m = init_model(TinyLMConfig(), 0)
    x = np.random.default_rng(1).integers(0, VOCAB_SIZE, size=(100, 32))
    p = nx.softmax(m(x).data.astype(np.float64))
    ent = -(p * np.log(p)).sum(-1).mean()
    assert abs(ent - math.log(VOCAB_SIZE)) < 0.2 * math.log(VOCAB_SIZE)


def test_default_param_count():
    total, trainable = count_params(init_model(TinyLMConfig(), 0))
    d, f, V, S, L = 128, 256, VOCAB_SIZE, 256, 2
    expected = V * d + S * d + L * (4 * d * d + 2 * d * f + 4 * d) + 2 * d
    assert total == trainable == expected


# ---- teacher clone -------------------------------------------------------------

def test_clone_frozen(model):
    teacher = clone_frozen(model)
    x = np.random.default_rng(2).integers(0, 256, size=(2, 24))
    assert teacher(x).data.tobytes() == model(x).data.tobytes()
    assert teacher.trainable() == {}
    assert count_params(model)[1] == count_params(init_model(SMALL, 3))[1]
    with nx.Tape() as tape:
        teacher(x)
    assert tape.nodes == []


def test_teacher_unchanged_by_student_updates():
    student = init_model(SMALL, 4)
    teacher = clone_frozen(student)
    h = param_hash(teacher)
    x = np.random.default_rng(3).integers(0, 256, size=(2, 24))
    snapshot = teacher(x).data.copy()
    state = nx.AdamState(lr=1e-2)
    for _ in range(3):
        params = student.trainable()
        with nx.Tape() as tape:
            loss = nx.cross_entropy_soft(student(x[:, :-1]), one_hot_targets(x[:, 1:], VOCAB_SIZE))
        tape.backward(loss, params.values())
        nx.adam_step(params, {k: p.grad for k, p in params.items()}, state)
    assert param_hash(teacher) == h
    assert np.array_equal(teacher(x).data, snapshot)
    assert param_hash(student) != h


# ---- adapters --------------------------------------------------------------------

def test_adapter_zero_init_bitwise(model):
    adapted = attach_adapter(model, AdapterConfig(rank=4), seed=0)
    x = np.random.default_rng(5).integers(0, 256, size=(2, 24))
    assert adapted(x).data.tobytes() == model(x).data.tobytes()


@pytest.mark.parametrize("rank", [1, 2, 8])
def test_adapter_trainable_count(rank):
    base = init_model(SMALL, 0)
    adapted = attach_adapter(base, AdapterConfig(rank=rank), 0)
    d, f = SMALL.d_model, SMALL.d_ff
    shapes = {"Q": (d, d), "K": (d, d), "V": (d, d), "O": (d, d), "MLP_up": (d, f), "MLP_down": (f, d)}
    expected = SMALL.n_layers * sum(rank * (a + b) for a, b in (shapes[t] for t in ADAPTER_TARGETS))
    total, trainable = count_params(adapted)
    assert trainable == expected
    assert total == count_params(base)[0] + expected
    assert all(".lora_" in k for k in adapted.trainable())


def test_adapter_subset_of_targets():
    adapted = attach_adapter(init_model(SMALL, 0), AdapterConfig(rank=2, target_matrices=("Q", "V")), 0)
    assert sorted(adapted.trainable()) == sorted(
        f"layers.0.attn.{m}.lora_{f}" for m in "qv" for f in "AB")


def test_adapter_errors():
    with pytest.raises(ValueError):
        AdapterConfig(rank=0)
    with pytest.raises(ValueError):
        AdapterConfig(target_matrices=("Z",))
    with pytest.raises(ValueError):
        attach_adapter(init_model(SMALL, 0), AdapterConfig(rank=17), 0)
    adapted = attach_adapter(init_model(SMALL, 0), AdapterConfig(rank=2), 0)
    with pytest.raises(ValueError):
        attach_adapter(adapted, AdapterConfig(rank=2), 0)


def test_adapter_scaling_enters_forward():
    base = init_model(SMALL, 0)
    a1 = attach_adapter(base, AdapterConfig(rank=2, alpha_adapter=2.0), 0)
    a2 = attach_adapter(base, AdapterConfig(rank=2, alpha_adapter=4.0), 0)
    for m in (a1, a2):
        for k, p in m.params.items():
            if k.endswith("lora_B"):
                p.data[:] = 0.05
    x = np.arange(10)[None]
    d1 = a1(x).data - base(x).data
    d2 = a2(x).data - base(x).data
    assert not np.allclose(d1, d2)


# ---- gradients through the whole model ----------------------------------------------

@pytest.mark.parametrize("soft", [False, True])
def test_end_to_end_grad_check(soft):
    cfg = TinyLMConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, seq_len=16)
    m = init_model(cfg, 11)
    r = np.random.default_rng(11)
    tokens = r.integers(0, 256, size=(2, 16))
    inputs, labels = tokens[:, :-1], tokens[:, 1:]
    if soft:
        target, _ = batch_correct(r.standard_normal((2, 15, VOCAB_SIZE)) * 2, labels, CorrectionConfig(0.25))
    else:
        target = one_hot_targets(labels, VOCAB_SIZE)
    names = sorted(m.params)

    def f(ps):
        for n, p in zip(names, ps):
            m.params[n] = p
        return nx.cross_entropy_soft(m(inputs), target)

    assert nx.grad_check(f, [m.params[n] for n in names], eps=1e-3, n_samples=200) < 1e-3


def test_adapter_grad_check():
    m = attach_adapter(init_model(SMALL, 1), AdapterConfig(rank=2), 1)
    for k, p in m.params.items():
        if k.endswith("lora_B"):
            p.data[:] = np.random.default_rng(0).standard_normal(p.data.shape).astype(np.float32) * 0.1
    tokens = np.random.default_rng(1).integers(0, 256, size=(2, 12))
    target = one_hot_targets(tokens[:, 1:], VOCAB_SIZE)
    names = sorted(m.trainable())

    def f(ps):
        for n, p in zip(names, ps):
            m.params[n] = p
        return nx.cross_entropy_soft(m(tokens[:, :-1]), target)

    assert nx.grad_check(f, [m.params[n] for n in names], eps=1e-3, n_samples=200) < 1e-3


# ---- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, model):
    path = save_checkpoint(model, tmp_path / "m.mft")
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    assert param_hash(loaded) == param_hash(model)
    for k in model.params:
        assert loaded.params[k].data.tobytes() == model.params[k].data.tobytes()


def test_checkpoint_round_trip_with_adapter(tmp_path):
    m = attach_adapter(init_model(SMALL, 0), AdapterConfig(rank=3, target_matrices=("K", "O")), 0)
    loaded = load_checkpoint(save_checkpoint(m, tmp_path / "a.mft"))
    assert loaded.adapter == m.adapter
    assert sorted(loaded.trainable()) == sorted(m.trainable())
    assert param_hash(loaded) == param_hash(m)


def test_checkpoint_header(tmp_path, model):
    path = save_checkpoint(model, tmp_path / "m.mft")
    raw = path.read_bytes()
    assert raw[:4] == b"MFT1"
    meta, blocks = read_container(path, kind="model")
    assert meta["config"]["d_model"] == 16
    assert all(b.dtype == np.float32 for b in blocks.values())


def test_checkpoint_corruption(tmp_path, model):
    path = save_checkpoint(model, tmp_path / "m.mft")
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.mft"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ContainerError):
        load_checkpoint(bad)
    bad.write_bytes(bytes(raw[:-3]))
    with pytest.raises(ContainerError):
        load_checkpoint(bad)
    bad.write_bytes(bytes(raw) + b"\0")
    with pytest.raises(ContainerError):
        load_checkpoint(bad)
