"""Wave-front sets of three one-dimensional functionals under the square phase.

    python demos/wavefront_gallery.py
"""

from microfbi import classify, functionals, phase

p = phase.square_phase(1)
phase.certify(p)

cases = {
    "delta at 0": {"variant": "points", "atoms": [{"x": [0.0]}]},
    "indicator of [0, 2]": {"variant": "density", "support": [[0, 2]], "profile": {"kind": "const", "value": 1}},
    "boundary value of 1/z": {"variant": "wedge", "g": "reciprocal", "V": [[-1, 1]], "y": [0.2]},
}
grid = {"taus": [[-0.5], [0.0], [0.5]], "jmax": 24}

for label, desc in cases.items():
    est = classify.wavefront(functionals.from_descriptor(desc), p, grid)
    print(label)
    for name, s in est.summary().items():
        wf = [(w["x"][0], w["theta"][0]) for w in s["wf_estimate"]]
        print(f"  WF_{name:7s} {wf}")
