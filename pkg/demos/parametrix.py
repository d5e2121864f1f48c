"""Parametrix of D^2 + x D and the decay of its remainder symbol.

    python demos/parametrix.py
"""

from microfbi import elliptic

z, = elliptic.zsyms(1)
P = elliptic.DifferentialOperator(1, [((2,), 1), ((1,), z)])

print("r =", elliptic.remainder_formula(P).expr())
for J in (1, 2, 3):
    res = elliptic.parametrix(P, J, box=[[0.5, 1.5]], z0=[1.0])
    print(f"J={J}  a_J = {res['a_J'].expr()}")
    print(f"      remainder slope on [64, 4096]: {res['slope']:.2f}")
