from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    probes: int
    worst: tuple = ()
    errors: list = field(default_factory=list, repr=False)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(function, params, probe_count=20, tolerance=1e-4, rng=None, step=1e-5):
    """Compare analytic gradients with central differences.

    ``function`` takes no arguments and returns a scalar :class:`Tensor`
    that depends on ``params``; it must be deterministic.  ``probe_count``
    coordinates are drawn per parameter (all of them when the parameter is
    smaller than that).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    function().backward()
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}

    errors = []
    for p in params:
        flat = p.data.reshape(-1)
        if flat.size <= probe_count:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=probe_count, replace=False)
        ga = analytic[id(p)].reshape(-1)
        for c in coords:
            old = flat[c]
            flat[c] = old + step
            up = float(function().data)
            flat[c] = old - step
            down = float(function().data)
            flat[c] = old
            numeric = (up - down) / (2.0 * step)
            errors.append((relative_error(float(ga[c]), numeric), p.name, int(c), float(ga[c]), numeric))
    for p in params:
        p.grad = None
    if not errors:
        return GradCheckReport(0.0, tolerance, 0)
    worst = max(errors, key=lambda e: e[0])
    return GradCheckReport(worst[0], tolerance, len(errors), worst[1:], errors)
