"""Two-direction loss surface around trained lifted-model parameters.

``f(a, b) = L(theta + a * delta + b * eta)`` where ``delta`` and ``eta`` are
independent Gaussian directions over the whole parameter vector, each
scaled to unit norm. No filter normalization.
"""

from __future__ import annotations

import numpy as np

from mrflift.neurolift import forward, loss


def random_direction(rng, params):
    parts = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in parts))
    return [d / norm for d in parts]


def loss_landscape(fit, radius=1.0, grid=101, seed=0):
    """Sample ``f`` on a ``grid x grid`` lattice over ``[-radius, radius]^2``.

    ``fit`` is a :class:`~mrflift.neurolift.FitResult`. Returns
    ``(alphas, betas, values)`` with ``values[a, b] = f(alphas[a], betas[b])``.
    With odd ``grid`` the centre cell is the loss at the trained parameters.
    """
    if radius <= 0 or grid < 2:
        raise ValueError("need radius > 0 and grid >= 2")
    if fit.model is None:
        raise ValueError("instance has no cliques; there is no network to perturb")
    rng = np.random.default_rng(seed)
    base = fit.model.param_list()
    delta = random_direction(rng, base)
    eta = random_direction(rng, base)
    axis = np.linspace(-radius, radius, grid)
    if grid % 2:
        axis[grid // 2] = 0.0
    work = fit.model.copy()
    names = list(work.params)
    values = np.empty((grid, grid))
    for a, alpha in enumerate(axis):
        for b, beta in enumerate(axis):
            for name, p0, d, e in zip(names, base, delta, eta):
                work.params[name] = p0 + alpha * d + beta * e
            values[a, b] = loss(fit.padded, forward(work, fit.graph, fit.temperature))
    return axis, axis.copy(), values
