"""Command-line experiment runner: ``cwl <command> --config cfg.json --out dir``.

Every run validates its JSON config before computing, writes deterministic
CSV/JSON/SVG artifacts and a ``manifest.json`` with their sha256 hashes.
Exit status: 0 success, 2 invalid config, 3 numerical failure (a
``diagnostic.json`` is written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import traceback
from pathlib import Path

import jsonschema
import numpy as np

log = logging.getLogger("cornerwave")

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3
# bounds are compared with this relative slack for quadrature error
QUAD_RTOL = 1e-10

# -- schemas -----------------------------------------------------------------

_NUM = {"type": "number"}
_CX = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_DOMAIN = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["polygon", "disk"]},
        "vertices": {"type": "array", "items": _POINT, "minItems": 3},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "center": _POINT,
    },
    "additionalProperties": False,
}
_MEDIUM = {
    "type": "object",
    "required": ["domain"],
    "properties": {
        "domain": _DOMAIN,
        "q": {"oneOf": [_CX, {"type": "array"}]},
        "eta": {"oneOf": [_CX, {"type": "object", "required": ["edges"],
                                "properties": {"edges": {"type": "array"}}}]},
    },
    "additionalProperties": False,
}
_INCIDENT = {
    "type": "object",
    "required": ["k"],
    "properties": {"k": {"type": "number", "exclusiveMinimum": 0}, "angle": _NUM},
    "additionalProperties": False,
}
_POS = {"type": "number", "exclusiveMinimum": 0}
_GRADING = {
    "type": "object",
    "required": ["vertices", "h_min"],
    "properties": {"vertices": {"type": "array", "items": _POINT}, "h_min": _POS, "growth": _POS},
    "additionalProperties": False,
}
_WINDOW = {
    "type": "object",
    "properties": {"k_min": _NUM, "k_max": _NUM, "imag_max": _POS},
    "additionalProperties": False,
}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_EIG_PROPS = {"medium": _MEDIUM, "mesh_h": _POS, "grading": _GRADING, "window": _WINDOW,
              "save_pairs": {"type": "integer", "minimum": 0}}

SCHEMAS = {
    "verify-cgo": _obj({
        "sector": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "h": _POS,
        "s_grid": _obj({"min_exp": _NUM, "max_exp": _NUM, "n": {"type": "integer", "minimum": 5}}),
        "alphas": {"type": "array", "items": _POS, "minItems": 1},
        "zeta": _POS, "omega": _POS,
        "closed_form_s": {"type": "array", "items": _POS},
    }),
    "fit-herglotz": _obj({
        "k": _POS, "P": {"type": "integer", "minimum": 0}, "domain": _DOMAIN, "mesh_h": _POS,
        "target": {"type": "object", "required": ["type"], "properties": {
            "type": {"enum": ["plane_wave", "kernel"]}, "angle": _NUM, "coeffs": {"type": "array"}}},
        "reg_lambda": {"oneOf": [{"type": "null"}, _POS]},
    }, ["k", "P", "domain"]),
    "eig": _obj(_EIG_PROPS, ["medium"]),
    "corner-profile": _obj({**_EIG_PROPS, "corner": {"type": "integer", "minimum": 0},
                            "pair": {"type": "integer", "minimum": 0}, "rho0": _POS,
                            "n_radii": {"type": "integer", "minimum": 2},
                            "field": {"enum": ["v", "w"]}}, ["medium"]),
    "forward": _obj({"medium": _MEDIUM, "incident": _INCIDENT, "R": _POS, "mesh_h": _POS,
                     "n_samples": {"type": "integer", "minimum": 4}}, ["medium", "incident"]),
    "farfield": _obj({"medium": _MEDIUM, "incident": _INCIDENT, "method": {"enum": ["series", "fem"]},
                      "R": _POS, "mesh_h": _POS, "n_samples": {"type": "integer", "minimum": 4}},
                     ["medium", "incident"]),
    "distinguish": _obj({"medium1": _MEDIUM, "medium2": _MEDIUM, "incident": _INCIDENT, "R": _POS,
                         "mesh_h": _POS, "n_samples": {"type": "integer", "minimum": 4}},
                        ["medium1", "medium2", "incident"]),
    "recover-eta": _obj({"domain": _DOMAIN, "q": _CX, "incident": _INCIDENT, "eta_true": _CX,
                         "observed_csv": {"type": "string"}, "noise": {"type": "number", "minimum": 0},
                         "search": {"type": "array", "minItems": 2, "maxItems": 2},
                         "R": _POS, "mesh_h": _POS, "n_samples": {"type": "integer", "minimum": 4},
                         "curve_points": {"type": "integer", "minimum": 3}},
                        ["domain", "incident", "search"]),
    "dimred-verify": _obj({"L": _POS, "k": _POS, "h": _POS, "theta": _NUM,
                           "s_grid": {"type": "array", "items": _POS, "minItems": 1},
                           "c1_L": _POS, "rhos": {"type": "array", "items": _POS},
                           "beta": _NUM, "n_points": {"type": "integer", "minimum": 1}}),
}


# -- output helpers ----------------------------------------------------------

class Artifacts:
    """Collects written files so the manifest can hash them."""

    def __init__(self, out: Path):
        self.out = out
        self.paths: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        self.paths.append(p)
        return p

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        return self.text(name, buf.getvalue())

    def add(self, p: Path) -> None:
        self.paths.append(Path(p))

    def svg(self, name: str, fig) -> Path:
        p = self.out / name
        fig.savefig(p, format="svg", metadata={"Date": None, "Creator": None})
        self.paths.append(p)
        return p

    def manifest(self, command: str) -> Path:
        entries = []
        for p in sorted(set(self.paths)):
            entries.append({"path": str(p.relative_to(self.out)),
                            "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        m = self.out / "manifest.json"
        m.write_text(json.dumps({"command": command, "artifacts": entries}, sort_keys=True, indent=1) + "\n")
        return m


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cornerwave"
    return plt.subplots(figsize=(5, 4))


def _cx(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)


def _medium(d: dict):
    from .teig import ConductiveMedium

    return ConductiveMedium.from_dict(d)


def _domain(d: dict):
    return _medium({"domain": d}).domain


def _incident(d: dict):
    from .scatter import IncidentWave

    return IncidentWave.from_angle(float(d["k"]), float(d.get("angle", 0.0)))


# -- commands ----------------------------------------------------------------

def cmd_verify_cgo(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from . import cgo
    from .geometry import Sector, delta_W

    tm, tM = cfg.get("sector", [-math.pi / 3, math.pi / 3])
    h = cfg.get("h", 0.5)
    g = cfg.get("s_grid", {})
    s_grid = np.logspace(g.get("min_exp", 2), g.get("max_exp", 6), g.get("n", 9))
    W = Sector(tm, tM)
    Sh = Sector(tm, tM, h)
    summary = {"sector": [tm, tM], "h": h, "slopes": {}, "inequalities": {}}

    def sweep(name, sampler, bound, expected):
        slope, s, vals = cgo.decay_slope(sampler, s_grid, return_values=True)
        bounds = [bound(x) for x in s]
        art.text(f"{name}.csv", cgo.slope_csv(s, vals, bounds))
        summary["slopes"][name] = {"slope": slope, "expected": expected}
        summary["inequalities"][name] = bool(all(v <= b * (1 + QUAD_RTOL) for v, b in zip(vals, bounds)))

    for a in cfg.get("alphas", [0.25, 0.5, 0.75]):
        sweep(f"xalpha_a{a:g}", lambda s, a=a: cgo.abs_moment_W(W, s, a),
              lambda s, a=a: cgo.xalpha_bound(W, s, a), -(a + 2))
        sweep(f"weighted_l2_a{a:g}", lambda s, a=a: math.sqrt(cgo.weighted_l2_norm_sq(Sh, s, a)),
              lambda s, a=a: math.sqrt(cgo.weighted_l2_bound(Sh, s, a)), -(a + 1))
    z, om = cfg.get("zeta", 1.0), cfg.get("omega", delta_W(W))
    sweep("zeta", lambda s: cgo.zeta_integral(s, h, z, om), lambda s: cgo.zeta_bound(s, z, om), -(z + 1))
    sweep("tail", lambda s: cgo.tail_integral(W, s, h), lambda s: cgo.tail_bound(W, s, h), None)
    sweep("u0_l2", lambda s: math.sqrt(cgo.u0_l2_norm_sq(Sh, s)),
          lambda s: math.sqrt(cgo.u0_l2_bound(Sh, s, h)), None)
    rows = []
    for s in cfg.get("closed_form_s", [1.0, 10.0, 100.0]):
        hq = cgo.truncation_radius(W, s, 40.0)
        val, tail = cgo.sector_integral_by_quadrature(W, s, hq)
        exact = cgo.sector_integral_u0(W, s)
        rows.append({"s": s, "quadrature": val, "closed_form": exact,
                     "rel_err": abs(val - exact) / abs(exact), "tail_bound": tail})
    summary["closed_form"] = rows
    art.json("summary.json", summary)
    return summary


def cmd_fit_herglotz(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .geometry import triangulate
    from .herglotz import FourierKernel, eval_quadrature, fit_kernel

    k, P = float(cfg["k"]), int(cfg["P"])
    mesh = triangulate(_domain(cfg["domain"]), cfg.get("mesh_h", 0.1))
    tgt = cfg.get("target", {"type": "plane_wave", "angle": 0.0})
    if tgt["type"] == "plane_wave":
        d = np.array([math.cos(tgt.get("angle", 0.0)), math.sin(tgt.get("angle", 0.0))])
        target = np.exp(1j * k * mesh.nodes @ d)
    else:
        target = eval_quadrature(FourierKernel(k, [_cx(c) for c in tgt["coeffs"]]), mesh.nodes)
    kernel, rep = fit_kernel(target, mesh, k, P, cfg.get("reg_lambda"))
    art.text("kernel.json", kernel.to_json() + "\n")
    art.json("fit_report.json", rep.to_dict())
    return rep.to_dict()


def _eig_pairs(cfg: dict):
    from .geometry import corner_grading, triangulate
    from .teig import SearchWindow, assemble, solve_dense_qz

    medium = _medium(cfg["medium"])
    gr = cfg.get("grading")
    size_fn = corner_grading(np.asarray(gr["vertices"], float), gr["h_min"], gr.get("growth", 0.25)) if gr else None
    mesh = triangulate(medium.domain, cfg.get("mesh_h", 0.1), size_fn=size_fn)
    pencil = assemble(medium, mesh)
    w = cfg.get("window")
    window = SearchWindow(w.get("k_min", 0.0), w.get("k_max", math.inf), w.get("imag_max", 1e-8)) if w else None
    return solve_dense_qz(pencil, window), mesh


def cmd_eig(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .teig import save_pair

    pairs, mesh = _eig_pairs(cfg)
    out = {"dof": 2 * len(mesh.interior_nodes()) + len(mesh.boundary_nodes()),
           "eigenpairs": [p.summary() for p in pairs]}
    art.json("eigenvalues.json", out)
    for i, p in enumerate(pairs[: cfg.get("save_pairs", 1)]):
        for path in save_pair(p, art.out, f"pair{i}"):
            art.add(path)
    return out


def cmd_corner_profile(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .geometry import CornerProbe, Polygon, dyadic_radii
    from .teig import corner_vanishing_profile, flat_point

    pairs, _ = _eig_pairs(cfg)
    if not pairs:
        raise RuntimeError("no eigenpair in the search window")
    pair = pairs[cfg.get("pair", 0)]
    poly = pair.medium.domain
    if not isinstance(poly, Polygon):
        raise ValueError("corner profiles need a polygonal domain")
    n = cfg.get("n_radii", 5)
    probe = CornerProbe.at_corner(poly, cfg.get("corner", 0), cfg.get("rho0", 0.2), n)
    control = CornerProbe(flat_point(pair), dyadic_radii(probe.radii[0], n))
    prof = corner_vanishing_profile(pair, probe, control, field=cfg.get("field", "v"))
    art.csv("profile.csv", ["probe", "rho", "value", "resolved"], prof.to_rows())
    fig, ax = _figure()
    for name, rows in (("corner", prof.corner), ("control", prof.control)):
        ax.loglog([b.rho for b in rows], [b.value for b in rows], "o-", label=name)
    ax.set_xlabel("rho")
    ax.set_ylabel("ball average of |field|")
    ax.legend()
    art.svg("profile.svg", fig)
    summary = {"k": pair.summary(), "corner_ratio": prof.ratio("corner"),
               "control_ratio": prof.ratio("control"), "corner_value": prof.corner_value,
               "control_point": list(control.vertex)}
    art.json("summary.json", summary)
    return summary


def cmd_forward(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .inverse import ScattererConfig

    conf = ScattererConfig(_medium(cfg["medium"]), _incident(cfg["incident"]), cfg.get("R"),
                           cfg.get("mesh_h", 0.1), cfg.get("n_samples", 64))
    sol = conf.solve()
    ff = sol.far_field(conf.n_samples)
    art.text("farfield.csv", ff.to_csv())
    summary = {"nodes": len(sol.mesh.nodes), "ring_radius": conf.ring_radius,
               "ring_flux": complex(sol.ring_flux())}
    art.json("summary.json", summary)
    return summary


def cmd_farfield(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .scatter import disk_series_forward

    method = cfg.get("method", "series")
    n = cfg.get("n_samples", 64)
    if method == "series":
        ff = disk_series_forward(_medium(cfg["medium"]), _incident(cfg["incident"])).far_field.resample(n)
    else:
        from .inverse import ScattererConfig

        ff = ScattererConfig(_medium(cfg["medium"]), _incident(cfg["incident"]), cfg.get("R"),
                             cfg.get("mesh_h", 0.1), n).far_field()
    art.text("farfield.csv", ff.to_csv())
    return {"method": method, "n_samples": n}


def cmd_distinguish(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .inverse import ScattererConfig, distinguish

    inc = _incident(cfg["incident"])
    kw = dict(R=cfg.get("R"), mesh_h=cfg.get("mesh_h", 0.1), n_samples=cfg.get("n_samples", 64))
    c1 = ScattererConfig(_medium(cfg["medium1"]), inc, **kw)
    c2 = ScattererConfig(_medium(cfg["medium2"]), inc, **kw)
    if kw["R"] is None:
        R = max(c1.ring_radius, c2.ring_radius)
        c1 = ScattererConfig(c1.medium, inc, R, kw["mesh_h"], kw["n_samples"])
        c2 = ScattererConfig(c2.medium, inc, R, kw["mesh_h"], kw["n_samples"])
    rep = distinguish(c1, c2, jobs=jobs).to_dict()
    art.json("report.json", rep)
    return rep


def cmd_recover_eta(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from .inverse import EtaProblem, add_noise, recover_eta
    from .scatter import FarField

    prob = EtaProblem(_domain(cfg["domain"]), _cx(cfg.get("q", 1.0)), _incident(cfg["incident"]),
                      R=cfg.get("R"), mesh_h=cfg.get("mesh_h", 0.1), n_samples=cfg.get("n_samples", 64))
    if "observed_csv" in cfg:
        obs = FarField.from_csv(Path(cfg["observed_csv"]).read_text())
    elif "eta_true" in cfg:
        obs = prob.far_field(_cx(cfg["eta_true"]))
    else:
        raise ValueError("give eta_true or observed_csv")
    if cfg.get("noise", 0.0) > 0:
        obs = add_noise(obs, cfg["noise"], seed)
    search = cfg["search"]
    if all(isinstance(x, (int, float)) for x in search):
        search = (float(search[0]), float(search[1]))
    else:
        search = tuple(tuple(map(float, x)) for x in search)
    rec = recover_eta(prob, obs, search, curve_points=cfg.get("curve_points", 21))
    d = rec.to_dict()
    rep = {"distance": None, "floor": None, "verdict": None, **d}
    art.json("report.json", rep)
    if isinstance(search[0], float):
        art.csv("misfit.csv", ["eta", "misfit"], [(float(np.real(e)), m) for e, m in rec.curve])
        fig, ax = _figure()
        ax.semilogy([np.real(e) for e, _ in rec.curve], [m for _, m in rec.curve], "o-")
        ax.axvline(float(np.real(rec.eta_hat)), color="k", lw=0.8)
        ax.set_xlabel("eta")
        ax.set_ylabel("far-field misfit")
        art.svg("misfit.svg", fig)
    return rep


def cmd_dimred_verify(cfg: dict, art: Artifacts, jobs: int, seed: int) -> dict:
    from . import dimred3d as dr

    L, k, h = cfg.get("L", 0.2), cfg.get("k", 1.0), cfg.get("h", 0.5)
    psi = dr.BumpFunction(L)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, h / math.sqrt(2), (cfg.get("n_points", 16), 2))
    beta = cfg.get("beta", 0.5 * k)
    reports = []
    for name, v in (("plane_wave", dr.CylinderField.plane_wave(k, 0.3, beta)),
                    ("bessel_cos", dr.CylinderField.bessel_cos(k, beta))):
        res = dr.reduction_pde_residual(v, psi, pts)
        reports.append(dr.CheckReport(f"reduction_pde_residual({name})", res, 0.0, 1e-8, res < 1e-8))
    reports += dr.c1_psi_bound_check(dr.BumpFunction(cfg.get("c1_L", 0.1)), cfg.get("rhos", [0.2, 0.5, 1.0]))
    reports += dr.c311_check(cfg.get("theta", -math.pi / 3), psi, k, cfg.get("s_grid", [1e3, 1e4]), h)
    out = [r.to_dict() for r in reports]
    art.json("checks.json", out)
    return {"checks": out}


COMMANDS = {
    "verify-cgo": cmd_verify_cgo,
    "fit-herglotz": cmd_fit_herglotz,
    "eig": cmd_eig,
    "corner-profile": cmd_corner_profile,
    "forward": cmd_forward,
    "farfield": cmd_farfield,
    "distinguish": cmd_distinguish,
    "recover-eta": cmd_recover_eta,
    "dimred-verify": cmd_dimred_verify,
}

DEFAULT_CONFIGS = {
    "verify-cgo": {},
    "dimred-verify": {},
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cwl", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON parameter file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="concurrent forward solves")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (u64)")
    return p


def _setup_logging() -> None:
    level = os.environ.get("CWL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def load_config(command: str, path: Path | None) -> dict:
    """Read and validate a config; raises ``jsonschema.ValidationError`` or ``ValueError``."""
    if path is None:
        if command not in DEFAULT_CONFIGS:
            raise ValueError(f"{command} needs --config")
        cfg = dict(DEFAULT_CONFIGS[command])
    else:
        cfg = json.loads(Path(path).read_text())
    jsonschema.validate(cfg, SCHEMAS[command])
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging()
    if not 0 <= args.seed < 2 ** 64:
        print("error: seed must fit in u64", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        cfg = load_config(args.command, args.config)
    except (jsonschema.ValidationError, ValueError, OSError) as e:
        msg = e.message if isinstance(e, jsonschema.ValidationError) else str(e)
        print(f"error: invalid config: {msg}", file=sys.stderr)
        return EXIT_SCHEMA
    art = Artifacts(args.out)
    log.info("running %s", args.command)
    try:
        COMMANDS[args.command](cfg, art, max(1, args.jobs), args.seed)
    except Exception as e:  # any failure past validation is reported as numerical
        diag = {"command": args.command, "error": type(e).__name__, "message": str(e),
                "traceback": traceback.format_exc().splitlines()[-3:]}
        art.json("diagnostic.json", diag)
        art.manifest(args.command)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    art.manifest(args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
