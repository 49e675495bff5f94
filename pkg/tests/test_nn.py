import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordinalvoice.nn import (
    Checkpoint,
    EncoderConfig,
    OptimizerState,
    Tensor,
    TrunkHeadConfig,
    adamw_step,
    build_audio_model,
    forward,
    forward_model,
    grad_check,
    lora_linear,
    mish,
    mish_array,
)
from ordinalvoice.nn.autograd import concat, log_sigmoid, stack
from ordinalvoice.nn.model import branch_forward


def _mish_ref(x):
    x = mpmath.mpf(x)
    return float(x * mpmath.tanh(mpmath.log1p(mpmath.exp(x))))


def test_mish_values():
    assert mish_array(np.array([0.0]))[0] == 0.0
    assert abs(mish_array(np.array([1.0]))[0] - 0.865098) < 1e-6
    assert abs(mish_array(np.array([20.0]))[0] - 20.0) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(-1000, 1000))
def test_mish_matches_high_precision(x):
    got = mish_array(np.array([x]))[0]
    ref = _mish_ref(x)
    assert np.isfinite(got)
    assert abs(got - ref) <= 1e-12 + 1e-12 * abs(ref)


def test_mish_gradient():
    x = np.linspace(-8, 8, 41)
    assert grad_check(lambda P: mish(P["x"]).sum(), {"x": x}) < 1e-7


def test_log_sigmoid_stable():
    out = log_sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert np.allclose(out, [-800.0, -np.log(2), 0.0])
    assert grad_check(lambda P: log_sigmoid(P["x"]).sum(), {"x": np.linspace(-12, 12, 13)}) < 1e-5


def test_grad_check_square():
    assert grad_check(lambda P: P["w"].square().sum(), {"w": np.array([3.0])}) <= 1e-7


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        grad_check(lambda P: P["w"].sqrt().sum(), {"w": np.array([-1.0])})


def test_elementary_ops_gradients():
    rng = np.random.default_rng(0)
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2)), "c": rng.standard_normal(2),
              "d": rng.uniform(1, 2, (3, 2))}

    def fn(P):
        h = P["a"] @ P["b"] + P["c"]
        h = (h * P["d"] - P["d"] / (P["d"] + 1.0)).square()
        h = concat([h, h.T.reshape(3, 2) * 2.0], axis=1)
        h = stack([h, -h], axis=0)
        return h[0, 1:].mean() + h.square().sum(axis=1, keepdims=True).sqrt().sum() * 0.1 + h.mean(axis=(1, 2)).sum()

    params["a"] = np.abs(params["a"]) + 0.5
    assert grad_check(fn, params) < 1e-6


def test_lora_initial_output_equals_base():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((5, 6)))
    W, b = Tensor(rng.standard_normal((4, 6))), Tensor(rng.standard_normal(4))
    A, B = Tensor(rng.standard_normal((2, 6)) * 0.01), Tensor(np.zeros((4, 2)))
    out = lora_linear(x, W, b, A, B, 4.0, 2)
    assert np.array_equal(out.data, x.data @ W.data.T + b.data)
    with pytest.raises(ValueError, match="shape mismatch"):
        lora_linear(x, W, b, Tensor(np.zeros((3, 6))), B, 4.0, 2)


def test_lora_scale_and_frozen_base():
    cfg = EncoderConfig()
    assert cfg.lora_scale == 2.0
    model = build_audio_model(cfg, seed=0)
    assert "enc.l0.lora_A" in model.trainable and "enc.l0.W" not in model.trainable
    P = model.tensors()
    _, _, scores = forward(model, {"enc": np.random.default_rng(0).standard_normal((2, 30, 40))}, True,
                           np.random.default_rng(0), P)
    (scores["depression"].sum() + scores["anxiety"].sum()).backward()
    assert P["enc.l0.W"].grad is None and P["enc.l1.b"].grad is None
    assert P["enc.l0.lora_A"].grad is not None or P["enc.l0.lora_B"].grad is not None


def test_forward_model_contract():
    model = build_audio_model(seed=3)
    feats = np.random.default_rng(4).standard_normal((2998, 40)).astype(np.float32)
    emb, dep, anx = forward_model(model, feats)
    assert emb.shape == (64,)
    again = forward_model(model, feats)
    assert dep == again[1] and anx == again[2] and np.array_equal(emb, again[0])
    assert forward_model(model, feats, True, seed=5)[1] == forward_model(model, feats, True, seed=5)[1]
    with pytest.raises(ValueError):
        forward_model(model, feats[:, :39])


def test_zero_weights_give_zero_scores():
    model = build_audio_model(seed=0)
    for k in model.params:
        if k.startswith(("trunk.", "head.")):
            model.params[k][...] = 0
    _, dep, anx = forward_model(model, np.zeros((2998, 40), dtype=np.float32))
    assert dep == 0.0 and anx == 0.0


def test_adapters_on_forward_path():
    model = build_audio_model(seed=0)
    feats = np.random.default_rng(1).standard_normal((100, 40)).astype(np.float32)
    before = forward_model(model, feats)[1]
    model.params["enc.l1.lora_B"] += 0.1
    assert forward_model(model, feats)[1] != before


def test_mean_pooling_permutation_invariant():
    model = build_audio_model(seed=2).astype(np.float64)
    x = np.random.default_rng(3).standard_normal((1, 50, 40))
    perm = np.random.default_rng(4).permutation(50)
    P = {k: Tensor(v) for k, v in model.params.items()}
    a = branch_forward(P, model.branches[0], x).data
    b = branch_forward(P, model.branches[0], x[:, perm]).data
    assert np.allclose(a, b, atol=1e-12)


def test_model_gradients_float64():
    model = build_audio_model(EncoderConfig(frame_dense_dims=(40, 12, 10), lora_rank=3, lora_alpha=6.0),
                              TrunkHeadConfig(trunk_hidden=9, embed_dim=7, head_hidden=5), seed=0)
    model = model.astype(np.float64)
    for k in model.params:
        if k.endswith("lora_B"):
            model.params[k] = np.random.default_rng(1).standard_normal(model.params[k].shape) * 0.1
    x = np.random.default_rng(2).standard_normal((2, 7, 40))
    trainable = {k: v for k, v in model.params.items() if k in model.trainable}

    def fn(P):
        full = {**{k: Tensor(v) for k, v in model.params.items()}, **P}
        _, emb, s = forward(model, {"enc": x}, True, np.random.default_rng(9), full)
        return s["depression"].square().sum() + s["anxiety"].sum() + emb.square().mean()

    assert grad_check(fn, trainable, max_entries=6) < 1e-6


def test_adamw_first_step():
    p = {"w": np.zeros(1)}
    adamw_step(p, {"w": np.ones(1)}, OptimizerState(lr=1e-3, weight_decay=0.01))
    assert p["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adamw_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    adamw_step(p, {"w": np.zeros(2)}, OptimizerState(weight_decay=0.0))
    assert np.array_equal(p["w"], [1.0, -2.0])
    adamw_step(p, {"w": np.zeros(2)}, OptimizerState(lr=1e-2, weight_decay=0.1))
    assert np.allclose(p["w"], np.array([1.0, -2.0]) * (1 - 1e-3))


def test_adamw_skips_decay_for_ordinal_biases():
    model = build_audio_model(seed=0)
    model.params["coral.depression"][:] = 1.0
    p = model.params
    grads = {"coral.depression": np.zeros(27, dtype=np.float32), "trunk.l1.b": np.zeros(64, dtype=np.float32)}
    p["trunk.l1.b"][:] = 1.0
    adamw_step(p, grads, OptimizerState(lr=0.1, weight_decay=0.5), model.no_decay())
    assert np.all(p["coral.depression"] == 1.0)
    assert np.allclose(p["trunk.l1.b"], 0.95)


def test_adamw_matches_reference_recurrence():
    rng = np.random.default_rng(5)
    theta = rng.standard_normal(4)
    p = {"w": theta.copy()}
    st_ = OptimizerState(lr=0.01, weight_decay=0.02)
    m = v = np.zeros(4)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adamw_step(p, {"w": g}, st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * ((m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8) + 0.02 * theta)
    assert np.allclose(p["w"], theta, atol=1e-14)


def test_checkpoint_round_trip(tmp_path):
    model = build_audio_model(seed=7)
    model.params["enc.l0.lora_B"] += 0.5
    path = model.save(tmp_path / "m.ckpt")
    loaded = Checkpoint.load(path)
    assert loaded.config == model.config and loaded.trainable == model.trainable
    assert all(np.array_equal(loaded.params[k], model.params[k]) for k in model.params)
    assert list(loaded.params) == list(model.params)
    feats = np.random.default_rng(0).standard_normal((50, 40)).astype(np.float32)
    assert forward_model(loaded, feats)[1] == forward_model(model, feats)[1]


def test_checkpoint_rejects_bad_files(tmp_path):
    path = build_audio_model(seed=0).save(tmp_path / "m.ckpt")
    data = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-100])
    with pytest.raises(ValueError, match="truncated"):
        Checkpoint.load(tmp_path / "cut.ckpt")
    OptimizerState().save(tmp_path / "o.bin")
    with pytest.raises(ValueError, match="not a checkpoint"):
        Checkpoint.load(tmp_path / "o.bin")


def test_optimizer_state_round_trip(tmp_path):
    st_ = OptimizerState(lr=0.01)
    p = {"w": np.ones(3, dtype=np.float32)}
    adamw_step(p, {"w": np.full(3, 0.5, dtype=np.float32)}, st_)
    st_.save(tmp_path / "o.bin")
    back = OptimizerState.load(tmp_path / "o.bin")
    assert back.t == 1 and back.lr == 0.01
    assert np.array_equal(back.m["w"], st_.m["w"]) and np.array_equal(back.v["w"], st_.v["w"])


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(lora_rank=0)
    with pytest.raises(ValueError):
        EncoderConfig(lora_dropout=1.0)
    with pytest.raises(ValueError):
        EncoderConfig(frame_dense_dims=(30, 96))
