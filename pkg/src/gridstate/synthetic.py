"""Synthetic transmission-like networks for scale tests.

Buses sit on a rectangular lattice. Every row is a chain and the first
column links the rows, which guarantees connectivity; extra vertical links are
added at random until the requested branch-to-bus ratio is reached. About one
bus in ten carries a generator and generation balances the total load.
"""

from __future__ import annotations

import math

import numpy as np

from .network import PQ, PV, SLACK, Branch, Bus, Generator, Network


def synthetic_network(n_bus: int, seed: int = 0, branch_ratio: float = 1.4,
                      generator_share: float = 0.1, base_mva: float = 100.0) -> Network:
    if n_bus < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    cols = max(2, int(math.sqrt(n_bus)))
    pos = [(i // cols, i % cols) for i in range(n_bus)]
    edges = set()
    for i in range(1, n_bus):
        r, c = pos[i]
        edges.add((i - 1, i) if c > 0 else (i - cols, i))
    vertical = [(i - cols, i) for i in range(cols, n_bus) if pos[i][1] > 0]
    rng.shuffle(vertical)
    extra = max(0, int(branch_ratio * n_bus) - len(edges))
    edges.update(map(tuple, vertical[:extra]))
    gens = np.flatnonzero(rng.random(n_bus) < generator_share)
    gens = np.union1d(gens, [0])
    loads = rng.uniform(0.0, 0.3, n_bus)
    loads[gens] *= 0.2
    buses = [Bus(i + 1, SLACK if i == 0 else (PV if i in gens else PQ),
                 p_load=float(loads[i]), q_load=float(0.3 * loads[i])) for i in range(n_bus)]
    branches = []
    for f, t in sorted(edges):
        x = float(rng.uniform(0.02, 0.2))
        branches.append(Branch(f + 1, t + 1, r=x / 8.0, x=x, b_shunt=float(rng.uniform(0.0, 0.05))))
    share = loads.sum() / len(gens)
    generators = [Generator(int(g) + 1, p_output=float(share), p_max=float(3 * share))
                  for g in gens]
    net = Network(base_mva, buses, branches, generators, name=f"synthetic{n_bus}")
    net.validate()
    return net
