"""STDN forward pass and its ablation variants.

Every variant shares one code path; flags derived from the variant name
switch the flow gate, the flow-as-features input, and the shape of the
long-term branch on or off.
"""

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import container
from .data.samples import SampleConfig
from .data.tensors import ConfigError, Normalizer
from .nn import functional as F
from .nn.init import glorot_uniform
from .nn.tensor import (Parameter, Tensor, add, concat, dense, getitem, matmul, mul, relu,
                        reshape, sigmoid, square, stack, tanh, tensor_sum)

VARIANTS = ("LSTN", "LSTN-FI", "LSTN-FGM", "LSTN-L", "LSTN-SL", "LSTN-PSAM", "STDN")


@dataclass(frozen=True)
class ModelConfig:
    S: int = 7
    K: int = 3
    filters: int = 64
    kernel: int = 3
    l: int = 2
    T_s: int = 7
    P: int = 3
    Q: int = 3
    hidden: int = 128
    lam: float = 0.5
    variant: str = "STDN"
    dropout: float = 0.5
    recurrent_dropout: float = 0.5
    external_dim: int = 0
    intervals_per_day: int = 48
    dtype: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.S % 2 == 0 or self.Q % 2 == 0 or self.kernel % 2 == 0:
            raise ConfigError("S, Q and kernel must be odd")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if min(self.K, self.filters, self.l, self.T_s, self.P, self.Q, self.hidden) < 1:
            raise ConfigError("sizes must be positive")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.recurrent_dropout < 1.0):
            raise ConfigError("dropout rates must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    # variant switches
    @property
    def gated(self):
        return self.variant in ("LSTN-FGM", "STDN")

    @property
    def flow_features(self):
        return self.variant == "LSTN-FI"

    @property
    def long_mode(self):
        """``None``, ``"concat"`` (one LSTM) or ``"separate"`` (within-day + day-level LSTMs)."""
        if self.variant in ("LSTN", "LSTN-FI", "LSTN-FGM"):
            return None
        return "concat" if self.variant == "LSTN-L" else "separate"

    @property
    def attention(self):
        return self.variant in ("LSTN-PSAM", "STDN")

    @property
    def shifts_used(self):
        """Indices into the Q axis that the long-term branch reads."""
        return list(range(self.Q)) if self.attention else [(self.Q - 1) // 2]

    def sample_config(self):
        return SampleConfig(S=self.S, l=self.l, T_s=self.T_s, P=self.P, Q=self.Q,
                            intervals_per_day=self.intervals_per_day)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AttentionTrace:
    weights: np.ndarray   # [N, P, Q], axis 1 is day offset p = 1..P


@dataclass
class Prediction:
    start_norm: np.ndarray
    end_norm: np.ndarray
    start_raw: np.ndarray
    end_raw: np.ndarray


# ---------------------------------------------------------------- parameters

def _lstm_params(prefix, d_in, hidden, rng, dtype):
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0  # forget gate
    return {
        f"{prefix}.W": Parameter(glorot_uniform((d_in, 4 * hidden), rng, dtype), f"{prefix}.W"),
        f"{prefix}.U": Parameter(glorot_uniform((hidden, 4 * hidden), rng, dtype), f"{prefix}.U"),
        f"{prefix}.b": Parameter(b, f"{prefix}.b"),
    }


def init_params(cfg, rng):
    """All learned tensors for ``cfg.variant``, in a fixed creation order."""
    dt = np.dtype(cfg.dtype)
    p = {}

    def add_param(name, value):
        p[name] = Parameter(value.astype(dt, copy=False), name)

    k, Fn, H = cfg.kernel, cfg.filters, cfg.hidden
    c_in = 2
    for i in range(1, cfg.K + 1):
        add_param(f"conv{i}.W", glorot_uniform((k, k, c_in, Fn), rng, dt))
        add_param(f"conv{i}.b", np.zeros(Fn))
        c_in = Fn
    if cfg.gated:
        c_in = 2 * cfg.l
        for i in range(1, cfg.K + 1):
            add_param(f"flow{i}.W", glorot_uniform((k, k, c_in, Fn), rng, dt))
            add_param(f"flow{i}.b", np.zeros(Fn))
            c_in = Fn
    add_param("spatial.W", glorot_uniform((cfg.S * cfg.S * Fn, H), rng, dt))
    add_param("spatial.b", np.zeros(H))

    step_in = H + cfg.external_dim
    if cfg.flow_features:
        step_in += cfg.S * cfg.S * 2 * cfg.l
    p.update(_lstm_params("short_lstm", step_in, H, rng, dt))
    if cfg.long_mode == "separate":
        p.update(_lstm_params("within_day_lstm", H + cfg.external_dim, H, rng, dt))
        p.update(_lstm_params("day_level_lstm", H, H, rng, dt))
    if cfg.attention:
        add_param("attn.W_H", glorot_uniform((H, H), rng, dt))
        add_param("attn.W_X", glorot_uniform((H, H), rng, dt))
        add_param("attn.b_X", np.zeros(H))
        add_param("attn.v", glorot_uniform((H, 1), rng, dt)[:, 0])
    head_in = 2 * H if cfg.long_mode == "separate" else H
    add_param("head.W", glorot_uniform((head_in, 2), rng, dt))
    add_param("head.b", np.zeros(2))
    return p


# ---------------------------------------------------------------- components

def gated_local_cnn(patches, flows, params, cfg):
    """Spatial representation of ``[M, S, S, 2]`` patches, gated by ``[M, S, S, 2l]`` flows.

    Layer ``k`` multiplies the volume activation by ``sigmoid`` of the
    pre-activation of flow layer ``k``; the rectified flow activation feeds
    flow layer ``k + 1``.
    """
    y = patches
    f = flows
    for k in range(1, cfg.K + 1):
        a = relu(F.conv2d(y, params[f"conv{k}.W"], params[f"conv{k}.b"]))
        if cfg.gated:
            pre = F.conv2d(f, params[f"flow{k}.W"], params[f"flow{k}.b"])
            a = mul(a, sigmoid(pre))
            f = relu(pre)
        y = a
    M = y.shape[0]
    out = dense(reshape(y, (M, -1)), params["spatial.W"], params["spatial.b"])
    if cfg.flow_features:
        flat = flows.data if isinstance(flows, Tensor) else np.asarray(flows)
        out = concat([out, Tensor(flat.reshape(M, -1), requires_grad=False)], axis=-1)
    return out


def run_lstm(steps, prefix, params, hidden, training=False, rng=None, rates=(0.0, 0.0)):
    """Unroll the LSTM ``prefix`` over a list of ``[B, D]`` inputs; returns per-step hidden states.

    Dropout masks are drawn once per call and reused at every step.
    """
    W, U, b = params[f"{prefix}.W"], params[f"{prefix}.U"], params[f"{prefix}.b"]
    B = steps[0].shape[0]
    dt = W.dtype
    h = Tensor(np.zeros((B, hidden), dtype=dt))
    c = Tensor(np.zeros((B, hidden), dtype=dt))
    in_mask = rec_mask = None
    if training and rates[0] > 0:
        in_mask = Tensor(F.dropout_mask((B, steps[0].shape[1]), rates[0], rng, dt))
    if training and rates[1] > 0:
        rec_mask = Tensor(F.dropout_mask((B, hidden), rates[1], rng, dt))
    outs = []
    for x in steps:
        if in_mask is not None:
            x = mul(x, in_mask)
        h_in = mul(h, rec_mask) if rec_mask is not None else h
        h, c = F.lstm_step(x, h_in, c, (W, U, b))
        outs.append(h)
    return outs


def short_term_encoder(spatial_reprs, externals, params, cfg, training=False, rng=None):
    """Final hidden state of the short-term LSTM over ``[N, T, D]`` step inputs."""
    if spatial_reprs.shape[1] != cfg.T_s:
        raise ConfigError(f"expected {cfg.T_s} short-term steps, got {spatial_reprs.shape[1]}")
    x = _with_externals(spatial_reprs, externals)
    steps = [getitem(x, (slice(None), t)) for t in range(x.shape[1])]
    return run_lstm(steps, "short_lstm", params, cfg.hidden, training, rng,
                    (cfg.dropout, cfg.recurrent_dropout))[-1]


def attention_scores(h_days, h_short, params):
    """``v . tanh(W_H h^{p,q} + W_X h + b_X)`` for ``h_days`` ``[N, P, Q, H]``; returns ``[N, P, Q]``."""
    N, P, Q, _ = h_days.shape
    hx = dense(h_short, params["attn.W_X"], params["attn.b_X"])
    A = hx.shape[-1]
    z = tanh(add(matmul(h_days, params["attn.W_H"]), reshape(hx, (N, 1, 1, A))))
    return reshape(matmul(z, reshape(params["attn.v"], (A, 1))), (N, P, Q))


def periodic_attention(h_short, long_reprs, long_ext, params, cfg, training=False, rng=None):
    """Long-term representation from ``[N, P, Q', D]`` relative-interval representations.

    A within-day LSTM runs over the Q' shifted steps of every day (weights
    shared across days); attention against ``h_short`` pools each day; a
    day-level LSTM reads the pooled days oldest first.
    Returns ``(h_long, attention weights [N, P, Q'] or None)``.
    """
    N, P, Qu, _ = long_reprs.shape
    H = cfg.hidden
    rates = (cfg.dropout, cfg.recurrent_dropout)
    x = _with_externals(long_reprs, long_ext)
    D = x.shape[-1]
    x = reshape(x, (N * P, Qu, D))
    steps = [getitem(x, (slice(None), q)) for q in range(Qu)]
    hs = run_lstm(steps, "within_day_lstm", params, H, training, rng, rates)
    if cfg.attention:
        h_days = reshape(stack(hs, axis=1), (N, P, Qu, H))
        alpha = F.softmax(attention_scores(h_days, h_short, params), axis=-1)
        pooled = tensor_sum(mul(h_days, reshape(alpha, (N, P, Qu, 1))), axis=2)
        weights = alpha.data
    else:
        # one relative interval per day: the pooled state is that step's output
        pooled = reshape(hs[Qu // 2], (N, P, H))
        weights = None
    days = [getitem(pooled, (slice(None), p)) for p in range(P - 1, -1, -1)]
    h_long = run_lstm(days, "day_level_lstm", params, H, training, rng, rates)[-1]
    return h_long, weights


def predict_head(h_short, h_long, params):
    """``tanh(W_fa [h_short; h_long] + b_fa)``, shape ``[N, 2]`` (start, end)."""
    hc = h_short if h_long is None else concat([h_short, h_long], axis=-1)
    return tanh(dense(hc, params["head.W"], params["head.b"]))


def loss_fn(pred, target, lam):
    """Per-sample ``lam * err_start^2 + (1 - lam) * err_end^2``, averaged over the batch."""
    target = np.asarray(target, dtype=pred.dtype)
    w = np.array([lam, 1.0 - lam], dtype=pred.dtype)
    sq = square(add(pred, Tensor(-target)))
    return mul(tensor_sum(mul(sq, w)), 1.0 / pred.shape[0])


def _with_externals(x, ext):
    if ext is None or np.asarray(ext).shape[-1] == 0:
        return x
    return concat([x, Tensor(np.asarray(ext, dtype=x.dtype))], axis=-1)


# ---------------------------------------------------------------- model

class STDNModel:
    """Parameters plus forward pass for one variant."""

    def __init__(self, config, seed=0, params=None):
        self.config = config
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))
        self.normalizer = None

    def parameters(self):
        return list(self.params.values())

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def _cast(self, arr):
        return np.asarray(arr, dtype=self.config.dtype)

    def forward(self, batch, training=False, rng=None):
        """Normalised predictions ``[N, 2]`` and the attention weights (or ``None``)."""
        cfg, prm = self.config, self.params
        sp = self._cast(batch["short_patches"])
        N, T = sp.shape[:2]
        S = cfg.S
        imgs = [sp.reshape(N * T, S, S, 2)]
        flows = [self._cast(batch["short_flows"]).reshape(N * T, S, S, 2 * cfg.l)]
        sel = cfg.shifts_used
        if cfg.long_mode is not None:
            lp = self._cast(batch["long_patches"])[:, :, sel]
            lf = self._cast(batch["long_flows"])[:, :, sel]
            P, Qu = lp.shape[1:3]
            imgs.append(lp.reshape(N * P * Qu, S, S, 2))
            flows.append(lf.reshape(N * P * Qu, S, S, 2 * cfg.l))
        reps = gated_local_cnn(Tensor(np.concatenate(imgs)), Tensor(np.concatenate(flows)), prm, cfg)
        D = reps.shape[-1]
        short = reshape(getitem(reps, slice(0, N * T)), (N, T, D))
        short_ext = batch.get("short_ext")
        long_ext = batch.get("long_ext")
        if long_ext is not None:
            long_ext = np.asarray(long_ext)[:, :, sel]

        rates = (cfg.dropout, cfg.recurrent_dropout)
        weights = None
        h_long = None
        if cfg.long_mode is None:
            h_short = short_term_encoder(short, short_ext, prm, cfg, training, rng)
        else:
            long = reshape(getitem(reps, slice(N * T, None)), (N, P, Qu, D))
            if cfg.long_mode == "concat":
                # relative intervals (oldest day first) followed by the short-term window
                xl = _with_externals(long, long_ext)
                xs = _with_externals(short, short_ext)
                steps = [getitem(xl, (slice(None), p, 0)) for p in range(P - 1, -1, -1)]
                steps += [getitem(xs, (slice(None), t)) for t in range(T)]
                h_short = run_lstm(steps, "short_lstm", prm, cfg.hidden, training, rng, rates)[-1]
            else:
                h_short = short_term_encoder(short, short_ext, prm, cfg, training, rng)
                h_long, weights = periodic_attention(h_short, long, long_ext, prm, cfg, training, rng)
        pred = predict_head(h_short, h_long, prm)
        return pred, (AttentionTrace(weights) if weights is not None else None)

    def loss(self, batch, training=False, rng=None):
        pred, _ = self.forward(batch, training, rng)
        return loss_fn(pred, batch["target"], self.config.lam)

    def predict(self, samples, batch_size=256):
        """Denormalised predictions for every sample of a :class:`SampleSet`."""
        normalizer = samples.normalizer if self.normalizer is None else self.normalizer
        out = []
        for b in samples.iter_batches(batch_size):
            pred, _ = self.forward(b)
            out.append(pred.data)
        y = np.concatenate(out) if out else np.zeros((0, 2))
        raw = normalizer.denormalize(y)
        return Prediction(y[:, 0].astype(np.float64), y[:, 1].astype(np.float64), raw[:, 0], raw[:, 1])

    # -- state
    def state(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            self.params[k].data[...] = v

    def save(self, path, normalizer=None):
        container.write(path, container.MAGIC_CHECKPOINT, *self._checkpoint(normalizer))

    def checkpoint_bytes(self, normalizer=None):
        return container.encode(container.MAGIC_CHECKPOINT, *self._checkpoint(normalizer))

    def _checkpoint(self, normalizer):
        normalizer = normalizer or self.normalizer
        tensors = {k: p.data.astype(np.float64) for k, p in self.params.items()}
        meta = {"kind": "checkpoint", "config": self.config.to_dict(),
                "normalizer": normalizer.to_dict() if normalizer is not None else None}
        return tensors, meta

    @classmethod
    def load(cls, path):
        tensors, meta = container.read(path, container.MAGIC_CHECKPOINT)
        cfg = ModelConfig.from_dict(meta["config"])
        model = cls(cfg)
        expected = set(model.params)
        if set(tensors) != expected:
            raise ConfigError(f"checkpoint tensors {sorted(set(tensors) ^ expected)} do not match {cfg.variant}")
        for k, v in tensors.items():
            if v.shape != model.params[k].shape:
                raise ConfigError(f"{k}: checkpoint shape {v.shape} != model shape {model.params[k].shape}")
            model.params[k].data[...] = v
        if meta.get("normalizer"):
            model.normalizer = Normalizer.from_dict(meta["normalizer"])
        return model

    def config_json(self):
        return json.dumps(self.config.to_dict(), sort_keys=True)


def build_variant(config, seed=0):
    """Model for ``config.variant``; raises :class:`ConfigError` for unknown variants."""
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    return STDNModel(config, seed)
