"""Shipped model instances and random-model generators.

The desk instance is the two-symbol, nearest-neighbor configuration used
throughout the tests and the acceptance suite: spins +1/-1, a weak
copy-your-neighborhood kernel, and a walk whose left/right bias follows the
spin under the walker.
"""

from __future__ import annotations

import numpy as np

from envwalk.geometry import Geometry
from envwalk.kernel import EnvKernel
from envwalk.walk import WalkModel

DESK_SYMBOLS = (1, -1)
DESK_SYMBOL_VALUES = np.array([1.0, -1.0])


def desk1d_kernel(eps0: float = 0.1, eps1: float = 0.05, stick: float = 0.9,
                  decay_exponent: float = 9.0) -> EnvKernel:
    """Two-symbol kernel on Z/L: copy rows biased toward the influencing spin."""
    return EnvKernel(
        alphabet=DESK_SYMBOLS,
        base=(0.5, 0.5),
        offsets=((-1,), (0,), (1,)),
        weights=(eps1, eps0, eps1),
        rows=((stick, 1.0 - stick), (1.0 - stick, stick)),
        decay_exponent=decay_exponent,
    )


def product_kernel_1d(eps0: float = 0.1, stick: float = 0.9) -> EnvKernel:
    """Sites evolve independently: influence set is just the origin."""
    return EnvKernel(alphabet=DESK_SYMBOLS, base=(0.5, 0.5), offsets=((0,),),
                     weights=(eps0,), rows=((stick, 1.0 - stick), (1.0 - stick, stick)),
                     decay_exponent=9.0)


def iid_kernel_1d(base=(0.5, 0.5)) -> EnvKernel:
    """Fully uncoupled limit: every site resamples from the base each step."""
    return EnvKernel(alphabet=DESK_SYMBOLS, base=base, offsets=((0,),), weights=(0.0,),
                     rows=((1.0, 0.0), (0.0, 1.0)), decay_exponent=9.0)


def desk1d_walk(delta: float = 0.1, base=(0.3, 0.4, 0.3)) -> WalkModel:
    """Nearest-neighbor walk; bias delta/2 toward the spin under the walker."""
    return WalkModel(
        dim=1,
        step_range=1,
        base=base,
        delta=delta,
        perturbation_support=((0,),),
        perturbation=((-0.5, 0.5), (0.0, 0.0), (0.5, -0.5)),
        n_symbols=2,
    )


def desk1d_geometry(side: int = 64) -> Geometry:
    return Geometry(dim=1, side=side)


def random_kernel_1d(gen: np.random.Generator, n_symbols: int | None = None,
                     eta0_max: float = 0.6) -> EnvKernel:
    """Random valid nearest-neighbor kernel with eta0 below ``eta0_max``."""
    m = int(gen.integers(2, 4)) if n_symbols is None else n_symbols
    base = gen.dirichlet(np.ones(m)) * 0.8 + 0.2 / m  # keep entries well positive
    base = base / base.sum()
    rows = gen.dirichlet(np.ones(m), size=m)
    raw = gen.random(3)
    # eta0 = eps_0 + 2 (eps_-1 + eps_1); scale draws to a random target below the max
    target = gen.uniform(0.1, eta0_max)
    eta_raw = raw[1] + 2.0 * (raw[0] + raw[2])
    eps = raw * (target / eta_raw)
    return EnvKernel(alphabet=tuple(range(m)), base=base, offsets=((-1,), (0,), (1,)),
                     weights=eps, rows=rows, decay_exponent=9.0)


def random_walk_1d(gen: np.random.Generator, kernel: EnvKernel,
                   eta1_max: float = 0.95) -> WalkModel:
    """Random nearest-neighbor walk whose amplified constant stays below 1.

    The perturbation reads the site under the walker; delta is capped so
    that probabilities stay in [0, 1] and eta1 stays below ``eta1_max``.
    """
    m = kernel.n_symbols
    base = gen.dirichlet(np.ones(3)) * 0.7 + 0.1
    base = base / base.sum()
    pert = gen.standard_normal((3, m))
    pert -= pert.mean(axis=0, keepdims=True)
    scale = np.abs(pert).max()
    if scale > 0:
        pert /= scale
    max_abs = np.abs(pert).max(axis=1).sum()
    eta0 = kernel.eta0
    lam = 3  # sup-norm ball of radius 1 in d=1
    d_cap = (eta1_max / eta0 - 1.0) / (1.0 + 2 * lam) if eta0 > 0 else np.inf
    room = np.inf
    for z in range(3):
        for w in range(m):
            b = pert[z, w]
            if b > 0:
                room = min(room, (1.0 - base[z]) / b)
            elif b < 0:
                room = min(room, base[z] / (-b))
    delta_max = min(room, d_cap / max_abs if max_abs > 0 else np.inf)
    delta = float(gen.uniform(0.0, max(0.0, min(delta_max, 0.5))))
    return WalkModel(dim=1, step_range=1, base=base, delta=delta,
                     perturbation_support=((0,),), perturbation=pert, n_symbols=m)
