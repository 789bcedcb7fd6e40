"""How the discrete orbit weights approach their continuous-time limit.

For a point in phase space the weighted sum along a discrete orbit with step
h is compared with the matching time integral along the exact flow. The error
should roughly halve each time h is halved.

    python demos/discretization.py
"""
import numpy as np

from neo.continuous import theorem9_convergence
from neo.targets import make_gaussian_L_1d

rows = theorem9_convergence(np.array([0.5, 0.3]), make_gaussian_L_1d(), 1.0, 1.0,
                            [0.2, 0.1, 0.05, 0.025, 0.0125])
print(f"continuous value {rows[0]['continuous']:.8f}")
print(f"{'h':>8s} {'discrete':>12s} {'error':>10s} {'ratio':>6s}")
for r in rows:
    ratio = r.get("ratio")
    ratio = "" if ratio is None or not np.isfinite(ratio) else f"{ratio:6.2f}"
    print(f"{r['h']:8.4f} {r['discrete']:12.8f} {r['error']:10.2e} {ratio}")
