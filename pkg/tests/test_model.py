from dataclasses import replace

import numpy as np
import pytest

from stdn.data import ConfigError
from stdn.model import (VARIANTS, ModelConfig, STDNModel, attention_scores, build_variant,
                        gated_local_cnn, init_params, loss_fn, periodic_attention, predict_head,
                        short_term_encoder)
from stdn.nn import Tensor, grad_check

TINY = ModelConfig(S=3, K=2, filters=4, T_s=2, P=2, Q=3, hidden=8, dropout=0.0, recurrent_dropout=0.0,
                   intervals_per_day=6)


def random_batch(cfg, N=3, seed=0, E=0):
    rng = np.random.default_rng(seed)
    S, l, T, P, Q = cfg.S, cfg.l, cfg.T_s, cfg.P, cfg.Q
    return {
        "short_patches": rng.uniform(-1, 1, (N, T, S, S, 2)),
        "short_flows": rng.uniform(-1, 1, (N, T, S, S, 2 * l)),
        "long_patches": rng.uniform(-1, 1, (N, P, Q, S, S, 2)),
        "long_flows": rng.uniform(-1, 1, (N, P, Q, S, S, 2 * l)),
        "short_ext": rng.normal(size=(N, T, E)),
        "long_ext": rng.normal(size=(N, P, Q, E)),
        "target": rng.uniform(-0.9, 0.9, (N, 2)),
    }


def sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def conv_ref(x, W, b):
    # x [H, W, C]; straight-line same-padded cross-correlation
    k = W.shape[0]
    r = k // 2
    xp = np.pad(x, ((r, r), (r, r), (0, 0)))
    H, Wd = x.shape[:2]
    out = np.empty((H, Wd, W.shape[3]))
    for i in range(H):
        for j in range(Wd):
            out[i, j] = np.tensordot(xp[i:i + k, j:j + k], W, axes=([0, 1, 2], [0, 1, 2])) + b
    return out


def lstm_ref(xs, W, U, b, H):
    h, c = np.zeros(H), np.zeros(H)
    hs = []
    for x in xs:
        z = x @ W + h @ U + b
        i, f, o, g = sig(z[:H]), sig(z[H:2 * H]), sig(z[2 * H:3 * H]), np.tanh(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    return hs


def p(model, name):
    return model.params[name].data


# ---------------------------------------------------------------- gated local CNN

def cnn_ref(model, patch, flow):
    cfg = model.config
    y, f = patch, flow
    for k in range(1, cfg.K + 1):
        a = np.maximum(conv_ref(y, p(model, f"conv{k}.W"), p(model, f"conv{k}.b")), 0)
        if cfg.gated:
            pre = conv_ref(f, p(model, f"flow{k}.W"), p(model, f"flow{k}.b"))
            a = a * sig(pre)
            f = np.maximum(pre, 0)
        y = a
    return y.ravel() @ p(model, "spatial.W") + p(model, "spatial.b")


@pytest.mark.parametrize("variant", ["LSTN", "STDN"])
def test_cnn_matches_straight_line_oracle(variant):
    model = STDNModel(replace(TINY, variant=variant), seed=1)
    rng = np.random.default_rng(2)
    patches = rng.uniform(-1, 1, (4, 3, 3, 2))
    flows = rng.uniform(-1, 1, (4, 3, 3, 4))
    out = gated_local_cnn(Tensor(patches), Tensor(flows), model.params, model.config).data
    for m in range(4):
        np.testing.assert_allclose(out[m], cnn_ref(model, patches[m], flows[m]), atol=1e-12)


def test_gate_is_half_with_zero_flow_weights_and_closes_at_minus_twenty():
    cfg = replace(TINY, variant="STDN", K=1)
    model = STDNModel(cfg, seed=3)
    rng = np.random.default_rng(4)
    patch = rng.uniform(-1, 1, (1, 3, 3, 2))
    zero = np.zeros((1, 3, 3, 4))
    model.params["flow1.W"].data[...] = 0.0
    ungated = STDNModel(replace(cfg, variant="LSTN"), params={k: v for k, v in model.params.items()
                                                              if not k.startswith("flow")})
    base = gated_local_cnn(Tensor(patch), Tensor(zero), ungated.params, ungated.config).data
    b = p(model, "spatial.b")
    half = gated_local_cnn(Tensor(patch), Tensor(zero), model.params, cfg).data
    np.testing.assert_allclose(half - b, 0.5 * (base - b), atol=1e-12)
    model.params["flow1.b"].data[...] = -20.0
    closed = gated_local_cnn(Tensor(patch), Tensor(zero), model.params, cfg).data
    np.testing.assert_allclose(closed, b[None], atol=1e-6)


def test_gate_monotone_in_flow_preactivation():
    cfg = replace(TINY, variant="STDN", K=1)
    model = STDNModel(cfg, seed=5)
    rng = np.random.default_rng(6)
    patch, flow = rng.uniform(-1, 1, (1, 3, 3, 2)), rng.uniform(-1, 1, (1, 3, 3, 4))
    model.params["spatial.W"].data[...] = 0.0
    model.params["spatial.W"].data[0, 0] = 1.0   # read gated cell (0, 0, filter 0)
    a = np.maximum(conv_ref(patch[0], p(model, "conv1.W"), p(model, "conv1.b")), 0)[0, 0, 0]
    vals = []
    for bias in (-30.0, -2.0, 0.0, 2.0, 30.0):
        model.params["flow1.b"].data[0] = bias
        vals.append(gated_local_cnn(Tensor(patch), Tensor(flow), model.params, cfg).data[0, 0])
    assert abs(vals[0]) < 1e-9 and abs(vals[-1] - a) < 1e-9
    assert all(x <= y + 1e-15 for x, y in zip(vals, vals[1:]))


def test_fgm_with_open_gate_equals_lstn():
    lstn = STDNModel(replace(TINY, variant="LSTN"), seed=7)
    fgm = STDNModel(replace(TINY, variant="LSTN-FGM"), seed=8)
    for k, v in lstn.params.items():
        fgm.params[k].data[...] = v.data
    for k in range(1, TINY.K + 1):
        fgm.params[f"flow{k}.W"].data[...] = 0.0
        fgm.params[f"flow{k}.b"].data[...] = 20.0
    batch = random_batch(TINY, seed=9)
    a, _ = lstn.forward(batch)
    b, _ = fgm.forward(batch)
    assert np.max(np.abs(a.data - b.data)) < 1e-4


def test_lstn_never_reads_flows():
    model = STDNModel(replace(TINY, variant="LSTN"), seed=10)
    batch = random_batch(TINY, seed=11)
    a, _ = model.forward(batch)
    batch["short_flows"] = batch["short_flows"] * 7 + 3
    batch["long_flows"] = np.full_like(batch["long_flows"], np.nan)
    b, _ = model.forward(batch)
    np.testing.assert_array_equal(a.data, b.data)


# ---------------------------------------------------------------- short-term encoder

def test_short_encoder_zero_params():
    cfg = replace(TINY, T_s=1)
    params = {k: v for k, v in init_params(cfg, np.random.default_rng(0)).items()}
    for name in ("short_lstm.W", "short_lstm.U", "short_lstm.b"):
        params[name].data[...] = 0.0
    h = short_term_encoder(Tensor(np.ones((2, 1, cfg.hidden))), None, params, cfg)
    np.testing.assert_array_equal(h.data, 0.0)


def test_short_encoder_matches_unroll_with_and_without_externals():
    for E in (0, 2):
        cfg = replace(TINY, T_s=3, external_dim=E)
        params = init_params(cfg, np.random.default_rng(12))
        rng = np.random.default_rng(13)
        x = rng.normal(size=(2, 3, cfg.hidden))
        ext = rng.normal(size=(2, 3, E))
        h = short_term_encoder(Tensor(x), ext, params, cfg).data
        W, U, b = (params[f"short_lstm.{n}"].data for n in "WUb")
        for n in range(2):
            steps = [np.concatenate([x[n, t], ext[n, t]]) for t in range(3)]
            np.testing.assert_allclose(h[n], lstm_ref(steps, W, U, b, cfg.hidden)[-1], atol=1e-12)


# ---------------------------------------------------------------- attention

def attention_ref(params, h_short, long_reprs, H):
    """Within-day LSTM, content attention, day-level LSTM oldest day first."""
    W, U, b = (params[f"within_day_lstm.{n}"].data for n in "WUb")
    WH, WX, bX, v = (params[f"attn.{n}"].data for n in ("W_H", "W_X", "b_X", "v"))
    P = long_reprs.shape[0]
    pooled, alphas = [], []
    for d in range(P):
        hs = lstm_ref(list(long_reprs[d]), W, U, b, H)
        scores = np.array([v @ np.tanh(hq @ WH + h_short @ WX + bX) for hq in hs])
        a = np.exp(scores - scores.max())
        a /= a.sum()
        alphas.append(a)
        pooled.append(sum(ai * hi for ai, hi in zip(a, hs)))
    W2, U2, b2 = (params[f"day_level_lstm.{n}"].data for n in "WUb")
    h_long = lstm_ref(pooled[::-1], W2, U2, b2, H)[-1]
    return h_long, np.array(alphas)


def test_periodic_attention_matches_composition_oracle():
    cfg = replace(TINY, variant="STDN", P=2, Q=3)
    params = init_params(cfg, np.random.default_rng(14))
    rng = np.random.default_rng(15)
    h_short = rng.normal(size=(2, cfg.hidden))
    long_reprs = rng.normal(size=(2, 2, 3, cfg.hidden))
    h_long, w = periodic_attention(Tensor(h_short), Tensor(long_reprs), None, params, cfg)
    for n in range(2):
        ref_h, ref_a = attention_ref(params, h_short[n], long_reprs[n], cfg.hidden)
        np.testing.assert_allclose(h_long.data[n], ref_h, atol=1e-12)
        np.testing.assert_allclose(w[n], ref_a, atol=1e-12)


def test_zero_v_gives_uniform_attention():
    model = STDNModel(replace(TINY, variant="STDN"), seed=16)
    model.params["attn.v"].data[...] = 0.0
    _, trace = model.forward(random_batch(TINY, seed=17))
    assert np.max(np.abs(trace.weights - 1 / 3)) <= 1e-12


def test_attention_shift_invariance_per_day():
    cfg = replace(TINY, variant="STDN")
    params = init_params(cfg, np.random.default_rng(18))
    rng = np.random.default_rng(19)
    h_days = rng.normal(size=(1, 2, 3, cfg.hidden))
    s = attention_scores(Tensor(h_days), Tensor(rng.normal(size=(1, cfg.hidden))), params).data
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    base = e / e.sum(axis=-1, keepdims=True)
    s2 = s.copy()
    s2[0, 1] += 5.0
    e2 = np.exp(s2 - s2.max(axis=-1, keepdims=True))
    np.testing.assert_allclose(e2 / e2.sum(axis=-1, keepdims=True), base, atol=1e-12)


def test_q1_attention_is_pass_through():
    cfg = replace(TINY, variant="STDN", Q=1)
    batch = random_batch(cfg, seed=20)
    a = STDNModel(cfg, seed=21)
    b = STDNModel(cfg, seed=21)
    rng = np.random.default_rng(22)
    for name in ("attn.W_H", "attn.W_X", "attn.b_X", "attn.v"):
        b.params[name].data[...] = rng.normal(size=b.params[name].shape) * 5
    pa, ta = a.forward(batch)
    pb, tb = b.forward(batch)
    np.testing.assert_array_equal(ta.weights, 1.0)
    np.testing.assert_allclose(pa.data, pb.data, atol=1e-14)


def test_psam_q1_equals_sl():
    cfg = replace(TINY, Q=1)
    psam = STDNModel(replace(cfg, variant="LSTN-PSAM"), seed=23)
    sl = STDNModel(replace(cfg, variant="LSTN-SL"), seed=24)
    for k, v in sl.params.items():
        psam.params[k].data[...] = v.data
    batch = random_batch(cfg, seed=25)
    np.testing.assert_allclose(psam.forward(batch)[0].data, sl.forward(batch)[0].data, atol=1e-14)


def test_sl_reads_only_the_unshifted_slice():
    cfg = replace(TINY, variant="LSTN-SL")
    model = STDNModel(cfg, seed=26)
    batch = random_batch(cfg, seed=27)
    a, trace = model.forward(batch)
    assert trace is None
    batch["long_patches"][:, :, [0, 2]] = 0.123
    np.testing.assert_array_equal(model.forward(batch)[0].data, a.data)
    batch["long_patches"][:, :, 1] = 0.5
    assert not np.array_equal(model.forward(batch)[0].data, a.data)


# ---------------------------------------------------------------- head and loss

def test_head_zero_weights_gives_midpoint():
    cfg = replace(TINY, variant="STDN")
    params = init_params(cfg, np.random.default_rng(28))
    params["head.W"].data[...] = 0.0
    params["head.b"].data[...] = 0.0
    out = predict_head(Tensor(np.ones((2, 8))), Tensor(np.ones((2, 8))), params).data
    np.testing.assert_array_equal(out, 0.0)


def test_head_matches_affine_tanh_and_stays_in_range():
    cfg = replace(TINY, variant="STDN")
    params = init_params(cfg, np.random.default_rng(29))
    rng = np.random.default_rng(30)
    hs, hl = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    out = predict_head(Tensor(hs), Tensor(hl), params).data
    ref = np.tanh(np.concatenate([hs, hl], axis=1) @ p_data(params, "head.W") + p_data(params, "head.b"))
    np.testing.assert_allclose(out, ref, atol=1e-14)
    big = predict_head(Tensor(hs * 1e6), Tensor(hl * 1e6), params).data
    assert np.all(np.isfinite(big)) and np.all(np.abs(big) <= 1.0)


def p_data(params, name):
    return params[name].data


def test_loss_examples():
    pred = Tensor(np.array([[0.3, -0.1]]))
    assert loss_fn(pred, np.array([[0.3, -0.1]]), 0.5).item() == 0.0
    assert loss_fn(pred, np.array([[0.1, 0.3]]), 0.5).item() == pytest.approx(0.10, abs=1e-15)
    a = loss_fn(pred, np.array([[0.1, 0.3]]), 1.0).item()
    b = loss_fn(pred, np.array([[0.1, -0.9]]), 1.0).item()
    assert a == b


# ---------------------------------------------------------------- whole model

@pytest.mark.parametrize("variant", VARIANTS)
def test_variant_gradients(variant):
    cfg = replace(TINY, variant=variant)
    model = STDNModel(cfg, seed=31)
    batch = random_batch(cfg, N=2, seed=32)
    rep = grad_check(lambda: model.loss(batch), model.parameters(), probe_count=6)
    assert rep.max_rel_error < 1e-4, rep.worst


def test_dropout_training_is_seeded_and_differs_from_inference():
    cfg = replace(TINY, dropout=0.5, recurrent_dropout=0.5)
    model = STDNModel(cfg, seed=33)
    batch = random_batch(cfg, seed=34)
    a = model.loss(batch, training=True, rng=np.random.default_rng(1)).item()
    b = model.loss(batch, training=True, rng=np.random.default_rng(1)).item()
    c = model.loss(batch).item()
    assert a == b and a != c


def _lstm_count(d_in, H):
    return 4 * H * (d_in + H + 1)


def expected_count(cfg):
    k2, Fn, H, S, E = cfg.kernel ** 2, cfg.filters, cfg.hidden, cfg.S, cfg.external_dim
    conv = k2 * 2 * Fn + Fn + (cfg.K - 1) * (k2 * Fn * Fn + Fn)
    flow = k2 * 2 * cfg.l * Fn + Fn + (cfg.K - 1) * (k2 * Fn * Fn + Fn)
    spatial = S * S * Fn * H + H
    v = cfg.variant
    n = conv + spatial
    if v in ("LSTN-FGM", "STDN"):
        n += flow
    short_in = H + E + (S * S * 2 * cfg.l if v == "LSTN-FI" else 0)
    n += _lstm_count(short_in, H)
    if v in ("LSTN-SL", "LSTN-PSAM", "STDN"):
        n += _lstm_count(H + E, H) + _lstm_count(H, H)
    if v in ("LSTN-PSAM", "STDN"):
        n += 2 * H * H + 2 * H
    head_in = 2 * H if v in ("LSTN-SL", "LSTN-PSAM", "STDN") else H
    return n + head_in * 2 + 2


@pytest.mark.parametrize("variant", VARIANTS)
def test_parameter_counts_closed_form(variant):
    for cfg in (replace(TINY, variant=variant), ModelConfig(variant=variant, external_dim=3)):
        assert build_variant(cfg).parameter_count() == expected_count(cfg)


def test_default_config_parameter_count_stdn():
    # conv 75072 + flow 76224 + spatial 401536 + three LSTMs 3 x 131584 + attention 33024 + head 514
    assert build_variant(ModelConfig()).parameter_count() == 981_122


def test_checkpoint_round_trip(tmp_path):
    model = STDNModel(replace(TINY, variant="STDN"), seed=35)
    model.save(tmp_path / "m.stdn")
    again = STDNModel.load(tmp_path / "m.stdn")
    assert again.config == model.config
    batch = random_batch(TINY, seed=36)
    np.testing.assert_array_equal(again.forward(batch)[0].data, model.forward(batch)[0].data)
    assert again.checkpoint_bytes() == model.checkpoint_bytes()


def test_unknown_variant_and_bad_config():
    with pytest.raises(ConfigError):
        build_variant({"variant": "LSTN-XYZ"})
    with pytest.raises(ConfigError):
        ModelConfig(Q=2)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"lambda": 0.5, "bogus": 1})
    assert ModelConfig.from_dict({"lambda": 0.25}).lam == 0.25
