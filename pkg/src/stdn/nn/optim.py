import numpy as np


class Adam:
    """Bias-corrected Adam over a list of :class:`Parameter` objects.

    Moments are keyed by parameter name, so the state survives a
    parameter list being rebuilt in a different order.
    """

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in params:
            if p.grad is None:
                continue
            g = p.grad
            if p.name not in self.m:
                self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    @staticmethod
    def zero_grad(params):
        for p in params:
            p.grad = None


def adam_step(params, state):
    """Functional spelling of ``state.step(params)``."""
    state.step(params)
    return params
