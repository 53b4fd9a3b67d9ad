import numpy as np


def glorot_uniform(shape, rng, dtype=np.float64):
    """Glorot/Xavier uniform; conv kernels ``[k, k, C_in, C_out]`` use receptive-field fans."""
    if len(shape) == 4:
        receptive = shape[0] * shape[1]
        fan_in, fan_out = shape[2] * receptive, shape[3] * receptive
    else:
        fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
