"""Command-line front end: ``dfibration <command> [options]``.

Settings come from built-in defaults, then an optional flat ``key = value``
config file (``--config``), then ``--set key=value`` overrides, then the
explicit flags.  Every run writes ``manifest.json`` to the output directory
listing the resolved settings, package versions, wall time, status and a
SHA-256 checksum for each output file.

Exit status: 0 on success, 2 on invalid input, 3 on a numerical
consistency failure or a failed numerical experiment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import calculus as calc
from . import fibration as fb
from . import geometry as geo
from . import io
from . import normal as nm
from . import transform as tr
from .errors import DFibrationError, NoArtifactFound, ValidationError

log = logging.getLogger("dfibration")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = ("radon-invert", "xray", "conjugate-scan", "bolker-check", "normal-op",
            "artifact-demo", "order-probe", "excess")

# key -> (type, default); None defaults mean "not set"
SETTINGS = {
    "output_dir": (str, "out"),
    "seed": (int, 0),
    "metric": (str, "focusing(0.8,0.25)"),
    "fibration": (str, "lines"),
    "grid": (int, 128),
    "angles": (int, 180),
    "nbeta": (int, 128),
    "nalpha": (int, None),
    "phantom": (str, "gaussian"),
    "step": (float, None),
    "h": (float, None),
    "rank_rtol": (float, 1e-6),
    "tol": (float, 1e-6),
    "samples": (int, 200),
    "count": (int, 10),
    "beta": (float, None),
    "alpha": (float, None),
    "x0": (str, "-0.55,0"),
    "xi0": (str, "1,0.3"),
    "eta0": (str, "0,1"),
    "freqs": (str, "8,11.3137,16,22.6274,32,45.2548,64"),
    "width": (float, None),
    "operator": (str, "normal"),
    "trials": (int, 16),
    "N": (int, None),
    "n": (int, None),
    "nprime": (int, None),
    "k": (int, None),
}
COMMAND_DEFAULTS = {"order-probe": {"grid": 512}, "bolker-check": {"samples": 20}}
POSITIVE = {"grid", "angles", "nbeta", "nalpha", "step", "h", "rank_rtol", "tol", "samples",
            "count", "width", "trials"}


# ---------------------------------------------------------------------------
# configuration

def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {ln}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def resolve_settings(layers) -> dict:
    """Merge setting layers (later wins) and convert values to their types."""
    merged = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    out = {}
    for key, (typ, default) in SETTINGS.items():
        val = merged.pop(key, default)
        if val is not None and not isinstance(val, typ):
            try:
                val = typ(val)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"setting {key}: cannot parse {val!r}") from exc
        if key in POSITIVE and val is not None and not val > 0:
            raise ValidationError(f"setting {key} must be positive, got {val}")
        out[key] = val
    if merged:
        raise ValidationError(f"unknown settings: {sorted(merged)}")
    return out


def _vec(text: str, size: int = 2) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise ValidationError(f"cannot parse vector {text!r}") from exc
    if v.size != size:
        raise ValidationError(f"expected {size} comma-separated numbers, got {text!r}")
    return v


def _floats(text: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError as exc:
        raise ValidationError(f"cannot parse list {text!r}") from exc
    if v.size < 2 or np.any(v <= 0):
        raise ValidationError("need at least two positive values")
    return v


def make_spec(cfg: dict, name: str | None = None):
    """Build the fibration named in the config."""
    from .lines import EuclideanLines
    from .synthetic import flat, linear, sines
    from .xray import GeodesicXRay

    name = (name or cfg["fibration"]).lower()
    if name == "lines":
        spec = EuclideanLines(1.0, cfg["rank_rtol"])
    elif name == "xray":
        spec = GeodesicXRay(geo.preset(cfg["metric"]), h=cfg["h"], rank_rtol=cfg["rank_rtol"])
    elif name in ("sines", "linear", "flat"):
        spec = {"sines": sines, "linear": linear, "flat": flat}[name]()
        spec.rank_rtol = cfg["rank_rtol"]
    else:
        raise ValidationError(f"unknown fibration {name!r}; use lines, xray, sines, linear, flat")
    return spec


# ---------------------------------------------------------------------------
# run context

class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.outputs: list[str] = []
        self.results: dict = {}

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.dir / name

    def csv(self, name, header, rows):
        io.write_csv(self.path(name), header, rows)

    def pgm(self, name, values):
        io.write_pgm(self.path(name), values)

    def dftg(self, name, obj):
        io.write_dftg(self.path(name), obj)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command, cfg, run: Run | None, status, error, wall):
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if run is not None:
        files = [{"path": p, "sha256": _sha256(out_dir / p)} for p in run.outputs]
    manifest = {
        "command": command,
        "settings": cfg,
        "seed": None if cfg is None else cfg.get("seed"),
        "versions": {"dfibration": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": wall,
        "status": status,
        "error": error,
        "results": {} if run is None else run.results,
        "outputs": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return str(o)
    return str(o)


# ---------------------------------------------------------------------------
# commands

def cmd_radon_invert(cfg, run: Run):
    q = tr.Quadrature(step=cfg["step"]) if cfg["step"] else None
    f = tr.phantom(cfg["phantom"], cfg["grid"])
    res = nm.helgason_invert(f, n_angles=cfg["angles"], q=q)
    run.dftg("phantom.dftg", f)
    run.dftg("reconstruction.dftg", res.reconstruction)
    run.pgm("reconstruction.pgm", res.reconstruction)
    run.pgm("normal.pgm", res.normal)
    run.csv("inversion.csv", ["phantom", "grid", "angles", "relative_error", "constant"],
            [[cfg["phantom"], cfg["grid"], cfg["angles"], res.relative_error, res.constant]])
    run.results.update(relative_error=res.relative_error, constant=res.constant)


def cmd_xray(cfg, run: Run):
    metric = geo.preset(cfg["metric"])
    f = tr.phantom(cfg["phantom"], cfg["grid"], metric.r_dom)
    q = tr.Quadrature("trapezoid", cfg["step"])
    u = tr.xray_forward(metric, None, f, cfg["nbeta"], cfg["nalpha"], cfg["h"], q)
    run.dftg("sinogram.dftg", u)
    run.pgm("sinogram.pgm", u.values)
    run.results.update(shape=list(u.values.shape), norm=u.norm())


def _random_geodesics(metric, count, rng, beta=None, alpha=None):
    if beta is not None and alpha is not None:
        return [(beta, alpha)]
    return [(float(rng.uniform(0, 2 * np.pi)), float(rng.uniform(-0.6, 0.6)))
            for _ in range(count)]


def cmd_conjugate_scan(cfg, run: Run):
    from .xray import GeodesicXRay

    rng = np.random.default_rng(cfg["seed"])
    metric = geo.preset(cfg["metric"])
    spec = GeodesicXRay(metric, h=cfg["h"], rank_rtol=cfg["rank_rtol"])
    pairs, reports = [], []
    for gi, (beta, alpha) in enumerate(_random_geodesics(metric, cfg["count"], rng,
                                                         cfg["beta"], cfg["alpha"])):
        g = geo.integrate_geodesic(metric, geo.boundary_start(metric, beta, alpha), cfg["h"])
        g.to_csv(run.path(f"geodesic_{gi:03d}.csv"))
        for p in geo.conjugate_scan(metric, g, cfg["tol"], t0s=[0.0]):
            pairs.append([gi, beta, alpha, p.t0, p.t1, p.degree, *p.x0, *p.x1])
        z = np.array([beta % (2 * np.pi), alpha])
        tau = spec.path(z).tau
        tx = float(rng.uniform(0.02, 0.1)) * tau
        for ty in spec.conjugate_partners(z, tx):
            x, y = spec.curve_point(z, tx), spec.curve_point(z, ty)
            rep = fb.classify_triplet(spec, z, x, y)
            rank, _ = fb.condition_h_check(spec, z, x, y, rep.degree, trials=cfg["trials"],
                                           rng=rng)
            reports.append(rep.with_(condition_h_rank=rank))
    run.csv("conjugate_pairs.csv",
            ["geodesic", "beta", "alpha", "t0", "t1", "degree", "x0_1", "x0_2", "x1_1", "x1_2"],
            pairs)
    fb.write_reports_csv(run.path("triplets.csv"), reports)
    run.results.update(pairs=len(pairs), triplets=len(reports))


def cmd_bolker_check(cfg, run: Run):
    spec = make_spec(cfg)
    if not hasattr(spec, "sample_incidence"):
        raise ValidationError("bolker-check needs the lines or xray fibration")
    rng = np.random.default_rng(cfg["seed"])
    zs, xs = spec.sample_incidence(cfg["samples"], rng)
    rows, collisions = [], 0
    for z, x in zip(zs, xs):
        eta_dd = np.array([rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)])
        rank, imm = fb.bolker_rank(spec, z, x, eta_dd)
        ch = spec.phi_chart(z, x)
        eta = ch.conormal(z, ch.to_local(x)[0], eta_dd) if hasattr(ch, "conormal") else None
        if spec.name == "lines":
            half = np.sqrt(max(spec.r_dom**2 - z[1] ** 2, 0.0))
            cands = np.linspace(-half, half, 64)
        else:
            cands = np.linspace(0.0, spec.path(z).tau, 64)
        hits = fb.pi_L_scan(spec, z, None, x, eta, cands)
        collisions += len(hits)
        rows.append([*z, *x, rank, int(imm), len(hits)])
    run.csv("bolker.csv", ["z1", "z2", "x1", "x2", "rank", "immersive", "pi_L_collisions"], rows)
    run.results.update(samples=len(rows), immersive=int(sum(r[5] for r in rows)),
                       collisions=collisions)


def cmd_normal_op(cfg, run: Run):
    spec = make_spec(cfg)
    f = tr.phantom(cfg["phantom"], cfg["grid"], spec.r_dom)
    kw = {"n_beta": cfg["nbeta"], "n_alpha": cfg["nalpha"]} if spec.name == "xray" else \
        {"n_angles": cfg["angles"]}
    q = tr.Quadrature("trapezoid" if spec.name == "xray" else "midpoint", cfg["step"])
    g = nm.normal_apply(spec, f, q, **kw)
    run.dftg("normal.dftg", g)
    run.pgm("normal.pgm", g)
    run.results.update(max=float(np.max(g.values)), norm=g.norm())


def cmd_artifact_demo(cfg, run: Run):
    from .xray import GeodesicXRay

    metric = geo.preset(cfg["metric"])
    spec = GeodesicXRay(metric, h=cfg["h"], rank_rtol=cfg["rank_rtol"])
    x0, eta0 = _vec(cfg["x0"]), _vec(cfg["eta0"])
    pred = nm.artifact_predict(spec, x0, eta0)
    run.csv("prediction.csv", ["label", "y1", "y2", "eta1", "eta2"],
            [[lab, *y, *e] for lab, (y, e, _) in zip(pred.labels, pred.predicted)])
    try:
        m = nm.artifact_measure(spec, x0, pred, n=cfg["grid"])
    except NoArtifactFound as exc:
        run.csv("artifact.csv", ["found", "c1", "c2", "distance_cells"], [[0, "", "", ""]])
        run.results.update(found=False, reason=str(exc))
        return
    run.pgm("normal.pgm", m.response)
    run.pgm("residual.pgm", m.residual)
    run.csv("artifact.csv", ["found", "c1", "c2", "distance_cells"],
            [[1, *m.centroid, m.distance_cells]])
    run.results.update(found=True, centroid=m.centroid, distance_cells=m.distance_cells)


def cmd_order_probe(cfg, run: Run):
    spec = make_spec(cfg)
    freqs = _floats(cfg["freqs"])
    n = cfg["grid"]
    res = nm.order_probe(spec, _vec(cfg["x0"]), _vec(cfg["xi0"]), freqs, cfg["operator"], n=n,
                         width=cfg["width"], n_angles=cfg["angles"])
    run.csv("probe.csv", ["freq", "amplitude"], zip(res.freqs, res.amplitudes))
    io.write_gnuplot_loglog(run.path("probe.gp"), "probe.csv", res.slope, res.intercept,
                            f"{spec.name} {cfg['operator']}")
    run.results.update(slope=res.slope)


def cmd_excess(cfg, run: Run):
    N, n, n1, k = cfg["N"], cfg["n"], cfg["nprime"], cfg["k"]
    if None in (N, n, n1):
        raise ValidationError("excess needs N, n and nprime")
    order = calc.fio_order(N, n, n1)
    clean = calc.clean_excess_no_conjugates(N, n, n1)
    header = ["N", "n", "n_prime", "n_dprime", "fio_order", "clean_excess", "normal_order"]
    row = [N, n, n1, n - n1, order, clean.excess, clean.normal_order]
    if k is not None:
        ce = calc.conjugate_excess(N, n, n1, k)
        header += ["k", "conjugate_excess", "a_order", "dim_E", "dim_CRk"]
        row += [k, ce.excess, ce.a_order, ce.dim_E, ce.dim_CRk]
    row = [str(v) for v in row]
    run.csv("excess.csv", header, [row])
    w = [max(len(h), len(v)) for h, v in zip(header, row)]
    print("  ".join(h.rjust(x) for h, x in zip(header, w)))
    print("  ".join(v.rjust(x) for v, x in zip(row, w)))
    run.results.update(dict(zip(header, row)))


HANDLERS = {
    "radon-invert": cmd_radon_invert,
    "xray": cmd_xray,
    "conjugate-scan": cmd_conjugate_scan,
    "bolker-check": cmd_bolker_check,
    "normal-op": cmd_normal_op,
    "artifact-demo": cmd_artifact_demo,
    "order-probe": cmd_order_probe,
    "excess": cmd_excess,
}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfibration",
                                description="Double fibration transform experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value settings file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one setting (repeatable)")
        s.add_argument("-v", "--verbose", action="store_true")
        for key in SETTINGS:
            flag = "--" + key.replace("_", "-")
            s.add_argument(flag, dest=key, default=None)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    flags = {k: getattr(args, k) for k in SETTINGS}
    out_dir = Path(flags["output_dir"] or SETTINGS["output_dir"][1])
    cfg, runner = None, None
    try:
        file_layer = {}
        if args.config:
            file_layer = parse_config_text(Path(args.config).read_text())
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip().replace("-", "_")] = v.strip()
        cfg = resolve_settings([COMMAND_DEFAULTS.get(args.command, {}), file_layer, overrides, flags])
        out_dir = Path(cfg["output_dir"])
        runner = Run(out_dir)
        HANDLERS[args.command](cfg, runner)
    except ValidationError as exc:
        _cleanup(runner, out_dir)
        write_manifest(out_dir, args.command, cfg, None, "invalid", str(exc),
                       time.perf_counter() - t0)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DFibrationError, np.linalg.LinAlgError) as exc:
        write_manifest(out_dir, args.command, cfg, runner, "numerical-failure",
                       f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_manifest(out_dir, args.command, cfg, runner, "ok", None, time.perf_counter() - t0)
    return EXIT_OK


def _cleanup(runner: Run | None, out_dir: Path) -> None:
    """Remove partial artifacts of a rejected run."""
    if runner is None:
        return
    for name in runner.outputs:
        (out_dir / name).unlink(missing_ok=True)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
