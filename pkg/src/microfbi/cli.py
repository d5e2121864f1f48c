"""Command-line front end.

    microfbi <command> --config run.json [--out DIR] [--threads N] [--seed U64]

Commands: validate-phase, transform, classify, wavefront, invert, decompose,
elliptic.  Reports are JSON (structured) and CSV (grids); each embeds the
config hash, tool version, seed and the effective tolerances.  Nothing that
depends on --threads is written, so N = 1 and N > 1 give identical bytes.

Exit codes: 0 pass, 2 validation rejection, 3 partial numeric failure,
4 config error.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from . import classify as cl
from . import cones, elliptic, functionals, phase, sequences, transform

EXIT_OK, EXIT_REJECT, EXIT_PARTIAL, EXIT_CONFIG = 0, 2, 3, 4

COMMANDS = ("validate-phase", "transform", "classify", "wavefront", "invert", "decompose", "elliptic")

_obj = {"type": "object"}
SCHEMA = {
    "type": "object",
    "properties": {
        "phase": _obj,
        "functional": _obj,
        "functionals": {"type": "array", "items": _obj},
        "grid": _obj,
        "conditions": {"type": "array"},
        "cover": _obj,
        "operator": _obj,
        "invert": _obj,
        "decompose": _obj,
        "elliptic": _obj,
        "tolerances": _obj,
        "samples": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "good_phase": {"type": "boolean"},
    },
}
NEEDS = {
    "validate-phase": ("phase",),
    "transform": ("functional",),
    "classify": (),
    "wavefront": ("functional",),
    "invert": ("functional",),
    "decompose": ("functional", "cover"),
    "elliptic": ("operator",),
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- serialization

def jsonable(o):
    if isinstance(o, dict):
        return {str(k): jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return jsonable(o.tolist())
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (complex, np.complexfloating)):
        return [jsonable(o.real), jsonable(o.imag)]
    if isinstance(o, (float, np.floating)):
        f = float(o)
        if np.isnan(f):
            return "nan"
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if hasattr(o, "to_dict"):
        return jsonable(o.to_dict())
    return o


def dump_json(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=1) + "\n"


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def tolerances(cfg):
    caps = caps_from(cfg)
    return {"caps": caps.to_dict(),
            "transform": {"cutoff": transform.CUTOFF, "rtol_check": transform.RTOL_CHECK,
                          "floor": transform.FLOOR},
            "overrides": cfg.get("tolerances", {})}


def header(cfg, command, seed):
    return {"tool": "microfbi", "version": __version__, "command": command,
            "config_sha256": config_hash(cfg), "seed": seed, "tolerances": tolerances(cfg)}


def comment_header(meta):
    lines = [f"# {k}: {meta[k]}" for k in ("tool", "version", "command", "config_sha256", "seed")]
    lines.append("# tolerances: " + json.dumps(jsonable(meta["tolerances"]), sort_keys=True))
    return "\n".join(lines) + "\n"


def csv_text(head, rows, meta):
    buf = io.StringIO()
    buf.write(comment_header(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


# ---------------------------------------------------------------- config parsing

def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config schema: {e.message}") from None
    return cfg


def caps_from(cfg):
    over = cfg.get("tolerances", {})
    fields = {k: over[k] for k in ("c2_min", "q_max", "q_cap", "rel_residual", "min_samples",
                                   "min_ratio", "bound_tol") if k in over}
    if "grid_exponents" in over:
        fields["grid_exponents"] = tuple(over["grid_exponents"])
    return cl.Caps(**fields)


def phase_from(cfg, N):
    if "phase" in cfg:
        p = phase.PhasePolynomial.from_descriptor(cfg["phase"])
        if p.N != N:
            raise ConfigError("phase and functional dimensions differ")
        return p
    return phase.square_phase(N)


def conditions_from(cfg):
    out = []
    for c in cfg.get("conditions", ["Cw", "Cinf", "Dprime"]):
        if isinstance(c, str):
            out.append(cl.SheafCondition(c))
        else:
            out.append(cl.SheafCondition(c["kind"], sequences.from_descriptor(c["sequence"])))
    return out


def functional_from(cfg):
    return functionals.from_descriptor(cfg["functional"])


# ---------------------------------------------------------------- commands

def cmd_validate_phase(cfg, out, threads, seed):
    meta = header(cfg, "validate-phase", seed)
    rep = dict(meta)
    try:
        p = phase.PhasePolynomial.from_descriptor(cfg["phase"])
        cert = phase.certify(p)
        rep["certificate"] = cert.to_dict()
        rep["phase"] = p.to_dict()
        if cfg.get("good_phase", True):
            g = phase.check_good_phase(p)
            g.pop("rows", None)
            rep["good_phase"] = g
            if not g["normalization_ok"]:
                rep["status"] = "rejected"
                rep["reason"] = g.get("rejected", "")
                _write(out, "phase_certificate.json", dump_json(rep))
                return EXIT_REJECT
        rep["status"] = "pass"
        code = EXIT_OK
    except phase.PhaseRejected as e:
        rep["status"] = "rejected"
        rep["reason"] = str(e)
        code = EXIT_REJECT
    _write(out, "phase_certificate.json", dump_json(rep))
    return code


def cmd_transform(cfg, out, threads, seed):
    mu = functional_from(cfg)
    p = phase_from(cfg, mu.N)
    grid = transform.fbi_grid(mu, p, cfg.get("grid", {}), threads=threads)
    meta = header(cfg, "transform", seed)
    _write(out, "samples.csv", comment_header(meta) + grid.to_csv())
    return EXIT_OK if np.all(grid.valid) else EXIT_PARTIAL


def cmd_classify(cfg, out, threads, seed, samples=None):
    path = samples or cfg.get("samples")
    if not path:
        raise ConfigError("classify needs --samples or a 'samples' entry")
    try:
        with open(path) as fh:
            grid = transform.SampleGrid.from_csv(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read samples: {e}") from None
    est = cl.classify_grid(grid, conditions_from(cfg), caps_from(cfg))
    rep = dict(header(cfg, "classify", seed))
    rep["estimate"] = est.to_dict()
    rep["invalid_cells"] = int(np.sum(~grid.valid))
    _write(out, "verdicts.json", dump_json(rep))
    return EXIT_OK if rep["invalid_cells"] == 0 else EXIT_PARTIAL


def cmd_wavefront(cfg, out, threads, seed):
    mu = functional_from(cfg)
    p = phase_from(cfg, mu.N)
    conds = conditions_from(cfg)
    est = cl.wavefront(mu, p, cfg.get("grid", {}), conds, caps_from(cfg), threads)
    seqs = [c.sequence for c in conds if c.sequence is not None]
    meta = header(cfg, "wavefront", seed)
    rep = dict(meta)
    rep["estimate"] = est.to_dict()
    rep["lattice_violations"] = cl.lattice_violations(est, _unique(seqs))
    _write(out, "wavefront.json", dump_json(rep))
    N = mu.N
    head = [f"x_{j + 1}" for j in range(N)] + [f"theta_{j + 1}" for j in range(N)] + ["condition", "holds"]
    _write(out, "wavefront.csv", csv_text(head, est.rows(), meta))
    return EXIT_OK if est.extra.get("invalid_cells", 0) == 0 else EXIT_PARTIAL


def _unique(seqs):
    seen, out = set(), []
    for s in seqs:
        if s.label not in seen:
            seen.add(s.label)
            out.append(s)
    return out


def cmd_invert(cfg, out, threads, seed):
    mu = functional_from(cfg)
    if mu.N != 1:
        raise ConfigError("invert is implemented for N = 1")
    p = phase_from(cfg, 1)
    icfg = cfg.get("invert", {})
    eps_list = [float(e) for e in icfg.get("eps", [0.1, 0.01, 0.001])]
    xs = np.asarray(icfg.get("x_points", [0.0]), float)
    W = icfg.get("W")
    h_names = icfg.get("tests", ["one"])
    meta = header(cfg, "invert", seed)
    rows, summary, prev, prev_pair = [], [], None, None
    code = EXIT_OK
    for eps in eps_list:
        try:
            res = transform.invert(mu, p, eps, xs, W, R_max=float(icfg.get("R_max", 2000.0)))
        except transform.TransformError as e:
            summary.append({"eps": eps, "status": "failed", "reason": str(e)})
            code = EXIT_PARTIAL
            continue
        vals = res.evaluation
        diff = np.abs(vals - prev) if prev is not None else np.full(len(xs), np.nan)
        for x, v, d in zip(xs, vals, diff):
            rows.append([eps, float(x), v.real, v.imag, d])
        pairs = {}
        for name in h_names:
            h = functionals.named_test(name, 1)
            pairs[name] = {"mu_eps_h": res.pair(h), "mu_H_eps": mu.apply(functionals.heat_approx(h, res.W, eps)["H"])
                           if icfg.get("heat_identity", True) else None}
        mass = pairs.get("one", {}).get("mu_eps_h")
        summary.append({"eps": eps, "status": "ok", "truncation_radius": res.truncation_radius,
                        "pairings": pairs,
                        "cauchy_difference_max": None if prev is None else float(np.max(diff)),
                        "cauchy_difference_mass": None if (prev_pair is None or mass is None) else abs(mass - prev_pair)})
        prev, prev_pair = vals, mass
    rep = dict(meta)
    rep["sequence"] = summary
    _write(out, "invert.json", dump_json(rep))
    _write(out, "invert.csv", csv_text(["eps", "x", "re", "im", "cauchy_diff"], rows, meta))
    return code


def cmd_decompose(cfg, out, threads, seed):
    mu = functional_from(cfg)
    p = phase_from(cfg, mu.N)
    try:
        cover = cones.cover_from_descriptor(cfg["cover"], seed)
    except cones.CoverError as e:
        rep = dict(header(cfg, "decompose", seed), status="rejected", reason=str(e))
        _write(out, "decompose.json", dump_json(rep))
        return EXIT_REJECT
    dcfg = cfg.get("decompose", {})
    N = mu.N
    zs = [np.asarray(_cplx(z), complex).reshape(N) for z in dcfg.get("z", [[[0.0, 0.1]] * N])]
    pieces = dcfg.get("pieces", ["F1", "fj", "Rj"])
    js = dcfg.get("j", list(range(1, cover.L + 1)))
    meta = header(cfg, "decompose", seed)
    rows, items = [], []
    code = EXIT_OK

    def run(label, j, z, fn):
        nonlocal code
        try:
            v = complex(fn())
            status = "ok"
        except cones.DivergenceError:
            v, status = complex("nan"), "divergent"
        except (transform.TransformError, cones.CoverError) as e:
            v, status = complex("nan"), f"failed: {e}"
        if status != "ok" and not (status == "divergent" and label in dcfg.get("allow_divergent", [])):
            code = EXIT_PARTIAL
        rows.append([label, j] + [x for c in z for x in (c.real, c.imag)] + [v.real, v.imag, status])
        return v, status

    for z in zs:
        if "F1" in pieces:
            run("F1", 1, z, lambda: cones.piece_F1(mu, p, cover, z))
        if "fj" in pieces:
            for j in js:
                run("f", j, z, lambda: cones.piece_fj_and_Rj(mu, p, cover, j, z, eps=float(dcfg.get("eps", 0.0)))[0])
        if "Rj" in pieces and N == 2:
            for j in js:
                run("R", j, z, lambda: cones.piece_Rj(mu, p, cover, j, z)[0])
    checks = []
    for z in zs:
        entry = {"z": z}
        if dcfg.get("additivity", True):
            try:
                entry["additivity"] = cones.cone_split_additivity(mu, p, cover, z, eps=float(dcfg.get("additivity_eps", 1e-2)))
                entry["additivity"].pop("per_cone", None)
            except (cones.DivergenceError, transform.TransformError) as e:
                entry["additivity"] = {"status": f"failed: {e}"}
                code = EXIT_PARTIAL
        if N == 2 and dcfg.get("r_partition", True):
            try:
                R1 = cones.R1_single_parametrization(mu, p, cover, z)
                Rsum = sum(cones.piece_Rj(mu, p, cover, j, z)[0] for j in range(2, cover.L + 1))
                entry["r_partition"] = {"R1": R1, "sum_Rj": Rsum, "residual": abs(R1 - Rsum)}
            except (cones.DivergenceError, transform.TransformError) as e:
                entry["r_partition"] = {"status": f"failed: {e}"}
                code = EXIT_PARTIAL
        checks.append(entry)
    if N == 1 and "cr_point" in dcfg:
        steps = [float(h) for h in dcfg.get("cr_steps", [0.04, 0.02, 0.01])]
        res, F = cones.cr_residuals(mu, p, cover, _cplx(dcfg["cr_point"]), steps)
        checks.append({"cr_point": _cplx(dcfg["cr_point"]), "steps": steps, "residuals": res,
                       "ratios": res[:-1] / res[1:], "abs_F1": F})
    rep = dict(meta)
    rep["cover"] = cover.to_dict()
    rep["cover_validation"] = cones.validate_cover(cover, seed=seed)
    rep["checks"] = checks
    _write(out, "decompose.json", dump_json(rep))
    head = ["piece", "j"] + [f"{a}_{k + 1}" for k in range(N) for a in ("re_z", "im_z")] + ["re", "im", "status"]
    _write(out, "decompose.csv", csv_text(head, rows, meta))
    return code


def _cplx(z):
    """[re, im] pairs (or plain reals) to complex."""
    if isinstance(z, (int, float)):
        return complex(z)
    if len(z) and isinstance(z[0], (list, tuple)):
        return [complex(*c) if isinstance(c, (list, tuple)) else complex(c) for c in z]
    if len(z) == 2 and all(isinstance(c, (int, float)) for c in z):
        return complex(z[0], z[1])
    return [complex(c) for c in z]


def cmd_elliptic(cfg, out, threads, seed):
    try:
        P = elliptic.DifferentialOperator.from_descriptor(cfg["operator"])
    except elliptic.OperatorError as e:
        raise ConfigError(str(e)) from None
    ecfg = cfg.get("elliptic", {})
    N = P.N
    meta = header(cfg, "elliptic", seed)
    rep = dict(meta)
    x_grid = np.asarray(ecfg.get("x_grid", [[0.0] * N]), float).reshape(-1, N)
    sph = elliptic.sphere_grid(N, int(ecfg.get("sphere_n", 64)))
    char = elliptic.char_set_sample(P, x_grid, sph, float(ecfg.get("char_tol", 1e-8)))
    rep["char_set"] = [{"x": list(x), "theta": list(t)} for x, t in char]
    rep["principal_symbol"] = str(P.principal())
    code = EXIT_OK
    rows = []
    if ecfg.get("parametrix", True):
        par = []
        for J in ecfg.get("J", [1, 2, 3]):
            try:
                r = elliptic.parametrix(P, int(J), ecfg.get("cone"), ecfg.get("box"), ecfg.get("z0"))
            except elliptic.EllipticityError as e:
                par.append({"J": J, "status": "not elliptic", "reason": str(e)})
                code = max(code, EXIT_REJECT)
                continue
            par.append({"J": J, "status": "ok", "slope": r["slope"], "slopes": r["slopes"],
                        "probe_max": r["probe_max"], "r_formula_agrees": r["r_agree"],
                        "r": r["r"].to_dict(), "a_J": r["a_J"].to_dict(), "remainder": r["remainder"].to_dict()})
            for k, th in enumerate(r["rays"]):
                for rr, v in zip(r["radii"], r["probe"][k]):
                    rows.append([J] + list(th) + [rr, v])
        rep["parametrix"] = par
    if "functional" in cfg:
        mu = functional_from(cfg)
        p = phase_from(cfg, mu.N)
        aud = elliptic.elliptic_wf_audit(P, mu, p, cfg.get("grid", {}), conditions_from(cfg), caps_from(cfg),
                                         threads, route=ecfg.get("route", "transpose"))
        rep["inclusion"] = [r.to_dict() for r in aud["reports"]]
        if aud.get("skipped"):
            code = EXIT_PARTIAL
        elif any(not r.consistent for r in aud["reports"]):
            code = max(code, EXIT_REJECT)
    _write(out, "elliptic.json", dump_json(rep))
    head = ["J"] + [f"theta_{j + 1}" for j in range(N)] + ["r", "abs_remainder"]
    _write(out, "elliptic_probe.csv", csv_text(head, rows, meta))
    return code


HANDLERS = {
    "validate-phase": cmd_validate_phase,
    "transform": cmd_transform,
    "classify": cmd_classify,
    "wavefront": cmd_wavefront,
    "invert": cmd_invert,
    "decompose": cmd_decompose,
    "elliptic": cmd_elliptic,
}


def _write(out, name, text):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w") as fh:
        fh.write(text)


def build_parser():
    ap = argparse.ArgumentParser(prog="microfbi", description="FBI-transform microlocal regularity toolkit")
    ap.add_argument("--version", action="version", version=f"microfbi {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True, help="run config (JSON)")
        sp_.add_argument("--out", default=".", help="output directory")
        sp_.add_argument("--threads", type=int, default=1)
        sp_.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        if name == "classify":
            sp_.add_argument("--samples", default=None, help="SampleGrid CSV from 'transform'")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for key in NEEDS[args.command]:
            if key not in cfg:
                raise ConfigError(f"'{args.command}' needs a '{key}' entry")
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        kw = {"samples": args.samples} if args.command == "classify" else {}
        return HANDLERS[args.command](cfg, args.out, args.threads, seed, **kw)
    except (ConfigError, functionals.FunctionalError, sequences.SequenceError, cl.ConditionError,
            KeyError, TypeError) as e:
        print(f"microfbi: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except phase.PhaseRejected as e:
        print(f"microfbi: phase rejected: {e}", file=sys.stderr)
        return EXIT_REJECT


if __name__ == "__main__":
    sys.exit(main())
