"""
Inside the model: the flow gate and the shifted attention
==========================================================

Builds a small untrained STDN, then pokes at the two mechanisms directly.
"""

from dataclasses import replace

import numpy as np

from stdn.model import ModelConfig, STDNModel

cfg = ModelConfig(S=5, K=2, filters=8, T_s=4, P=2, Q=3, hidden=16, dropout=0.0, recurrent_dropout=0.0)
rng = np.random.default_rng(0)


def random_batch(cfg, N=3):
    S, l = cfg.S, cfg.l
    return {
        "short_patches": rng.uniform(-1, 1, (N, cfg.T_s, S, S, 2)),
        "short_flows": rng.uniform(-1, 1, (N, cfg.T_s, S, S, 2 * l)),
        "long_patches": rng.uniform(-1, 1, (N, cfg.P, cfg.Q, S, S, 2)),
        "long_flows": rng.uniform(-1, 1, (N, cfg.P, cfg.Q, S, S, 2 * l)),
        "target": np.zeros((N, 2)),
    }


batch = random_batch(cfg)
model = STDNModel(cfg, seed=1)
print(f"STDN with {model.parameter_count()} parameters")

# %% attention over the Q shifted intervals of each previous day
pred, trace = model.forward(batch)
print("predictions (normalised start, end):\n", np.round(pred.data, 3))
print("attention weights, sample 0 (rows are days back):\n", np.round(trace.weights[0], 3))
print("rows sum to", trace.weights.sum(axis=-1).ravel())

# a zero scoring vector cannot tell the shifts apart
flat = STDNModel(cfg, seed=1)
flat.params["attn.v"].data[...] = 0.0
print("v = 0 gives", np.unique(flat.forward(batch)[1].weights))

# %% the gate: a wide-open gate turns the gated model into the ungated one
gated = STDNModel(replace(cfg, variant="LSTN-FGM"), seed=2)
plain = STDNModel(replace(cfg, variant="LSTN"), seed=2)
for name, p in plain.params.items():
    p.data[...] = gated.params[name].data
for k in range(1, cfg.K + 1):
    gated.params[f"flow{k}.W"].data[...] = 0.0
    gated.params[f"flow{k}.b"].data[...] = 20.0
gap = np.abs(gated.forward(batch)[0].data - plain.forward(batch)[0].data).max()
print(f"open gate vs no gate: max difference {gap:.1e}")

# and shutting it leaves only the dense bias of the spatial layer
for k in range(1, cfg.K + 1):
    gated.params[f"flow{k}.b"].data[...] = -20.0
shut = gated.forward(batch)[0].data
print("closed gate predictions no longer depend on the input:", np.allclose(shut, shut[0]))
