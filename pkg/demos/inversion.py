"""Recover the indicator of [-1, 1] from its FBI transform as eps shrinks.

    python demos/inversion.py
"""

import numpy as np

from microfbi import functionals, phase, transform

p = phase.square_phase(1)
mu = functionals.from_descriptor({"variant": "density", "support": [[-1, 1]],
                                  "profile": {"kind": "const", "value": 1}})
xs = np.array([-1.5, -0.5, 0.0, 0.5, 1.5])
one = functionals.named_test("one", 1)

for eps in (0.1, 0.01, 0.001):
    res = transform.invert(mu, p, eps, xs, W=[[-2, 2]])
    vals = " ".join(f"{v.real:7.4f}" for v in res.evaluation)
    print(f"eps={eps:<6g} mu_eps(x) = {vals}   mass = {res.pair(one).real:.6f}")
