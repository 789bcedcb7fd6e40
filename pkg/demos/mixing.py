"""Watch an orbit MCMC chain move across a 25-mode mixture in two dimensions.

Each iteration proposes N starting points, extends each into a short orbit
and resamples one point. The demo reports how many of the 25 modes the chain
has visited after a growing number of iterations. It also shows how evenly
the chain spends its time between modes. An i-SIR chain with the same
number of proposals is shown for reference.

    python demos/mixing.py
"""
import numpy as np

from neo import KernelConfig, RngStream, make_mg25, phase_transform, run_chain, run_isir, uniform_window_weights
from neo.mcmc import mode_occupancy
from neo.targets import mg25_means

N_ITERS = 5000
CHECKPOINTS = (100, 500, 1000, 5000)

target = make_mg25(2)
phase, transform = phase_transform(target, gamma=1.0, h=0.1)
centers = mg25_means(2)

neo_cfg = KernelConfig(10, uniform_window_weights(10), transform, "autoregressive", alpha=0.99)
neo = run_chain(None, neo_cfg, phase, N_ITERS, RngStream(5))
isir = run_isir(None, neo_cfg, target, N_ITERS, RngStream(5))

for label, out in (("orbit MCMC", neo), ("i-SIR", isir)):
    pos = out.samples[:, :2]
    print(f"{label}: acceptance {out.acceptance_rate:.2f}")
    for n in CHECKPOINTS:
        occ = mode_occupancy(pos[:n], centers)
        print(f"  after {n:5d} steps: {int((occ > 0).sum()):2d} modes visited, "
              f"max/min occupancy x25 = {25 * occ.max():.2f}/{25 * occ.min():.2f}")
