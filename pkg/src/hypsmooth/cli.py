"""Command-line front end.

Every subcommand reads one scenario file and writes ``report.json`` (plus
CSV artifacts) into the output directory.  Reports are deterministic: floats
are printed with 17 significant digits and the wall time goes to a separate
``timing.json``.

Exit codes: 0 success, 1 usage or scenario error, 2 a structural condition
fails, 3 an iteration did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys as _sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .boundary import LinearReflection
from .characteristics import DEFAULT_TOL, trace
from .expr import ExpressionError, compile_expression
from .fourier import PanelGrid, exponent_profiles, iso_margins, to_modes
from .fredholm import build_discrete_D, fredholm_solve, kernel_and_index
from .grid import GridFunction
from .scenario import Scenario, ScenarioError, load_scenario
from .smoothing import regularity_profile, track_singularity
from .solver import SolverError, renewal_boundary, solve_ibvp, solve_periodic_strip
from .system import CoefficientError, check_bv_factorization, check_hyperbolicity, check_levy

__all__ = ["main", "dumps", "EXIT_OK", "EXIT_USAGE", "EXIT_CONDITION", "EXIT_DIVERGED"]

log = logging.getLogger("hypsmooth")

EXIT_OK, EXIT_USAGE, EXIT_CONDITION, EXIT_DIVERGED = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# deterministic JSON


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, float):
        if math.isfinite(obj):
            text = format(obj, ".17g")
            return text if any(c in text for c in ".en") else text + ".0"
        return json.dumps(str(obj))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    return json.dumps(obj)


def dumps(obj, indent: int = 2) -> str:
    """JSON text with sorted keys and ``.17g`` floats (non-finite as strings)."""
    return _encode(_plain(obj), indent, 0) + "\n"


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])


# ---------------------------------------------------------------------------
# commands


def _check_report(scn: Scenario, args) -> dict:
    sys = scn.system()
    chk = scn.section("check")
    grid = tuple(chk.get("grid", (64, 64)))
    window = tuple(chk["window"]) if "window" in chk else None
    out = {}
    hyp = check_hyperbolicity(sys, grid=grid, window=window)
    out["hyperbolicity"] = hyp.to_dict()
    ok = hyp.passed
    if ok and sys.has_coupling():
        lev = check_levy(sys, eps_sep=chk.get("eps_sep"), grid=grid, window=window)
        out["levy"] = lev.to_dict()
        ok = ok and lev.passed
        if all(c.time_independent for c in sys.a) and all(c.time_independent for r in sys.b for c in r):
            bv = check_bv_factorization(sys, eps_sep=chk.get("eps_sep"), convention=chk.get("convention", "levy"))
            out["bv_factorization"] = bv.to_dict()
    bnd = scn.doc.get("boundary", {})
    if ok and bnd.get("type") == "reflection" and sys.domain.periodic:
        bc = scn.boundary()
        prof = exponent_profiles(sys)
        im = iso_margins(prof, bc.r0, bc.r1, args.smax if args.smax is not None else 64)
        out["iso_margins"] = im.to_dict()
        ok = ok and im.passed
    out["passed"] = bool(ok)
    return out


def cmd_check(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    rep = _check_report(scn, args)
    return rep, EXIT_OK if rep["passed"] else EXIT_CONDITION


def _config(scn, args):
    kw = {"tol": args.tol}
    if args.resolution:
        kw["nx"], kw["nt"] = args.resolution
    return scn.solve_config(**kw)


def _warm_start(scn, periodic):
    path = scn.section("solver").get("warm_start")
    if not path:
        return None
    base = Path(scn.source).parent if scn.source else Path(".")
    p = Path(path) if Path(path).is_absolute() else base / path
    try:
        return GridFunction.from_csv(p, periodic=periodic)
    except (OSError, ValueError) as exc:
        raise ScenarioError(f"cannot read warm start {p}: {exc}", "/solver/warm_start") from None


def cmd_simulate(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    sys = scn.system()
    if not sys.domain.has_initial_line:
        raise ScenarioError("simulate needs a half-strip domain", "/domain/kind")
    if scn.initial() is None:
        raise ScenarioError("simulate needs initial data", "/initial")
    bundle = solve_ibvp(sys, scn.boundary(), scn.initial(), scn.t_end, _config(scn, args),
                        initial=_warm_start(scn, False))
    bundle.u.to_csv(outdir / "field.csv")
    return {"solution": bundle.to_dict()}, EXIT_OK


def cmd_solve_periodic(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    sys = scn.system()
    if not sys.domain.periodic:
        raise ScenarioError("solve-periodic needs a periodic domain", "/domain/kind")
    bundle = solve_periodic_strip(sys, scn.boundary(), _config(scn, args), initial=_warm_start(scn, True),
                                  seed=scn.doc.get("seed"))
    bundle.u.to_csv(outdir / "field.csv")
    return {"solution": bundle.to_dict()}, EXIT_OK


def cmd_probe_smoothing(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    sys = scn.system()
    if scn.initial() is None:
        raise ScenarioError("probe-smoothing needs initial data", "/initial")
    probe = scn.section("probe")
    bundle = solve_ibvp(sys, scn.boundary(), scn.initial(), scn.t_end, _config(scn, args))
    windows = [tuple(w) for w in probe["windows"]] if "windows" in probe else None
    prof = regularity_profile(bundle, windows, k_max=probe.get("k_max", 3), refinements=probe.get("refinements", 2))
    report = {"solution": bundle.to_dict(), "profile": prof.to_dict()}
    if "x0" in probe:
        track = track_singularity(bundle, probe["x0"], probe.get("component", 0))
        report["track"] = track.to_dict()
        rows = [(float(t), float(p), float(uj), float(dj), int(sg))
                for t, p, uj, dj, sg in zip(track.t, track.position, track.u_jump, track.du_jump, track.segment)]
        _write_rows(outdir / "jumps.csv", ["t", "x", "u_jump", "du_jump", "segment"], rows)
    bundle.u.to_csv(outdir / "field.csv")
    return report, EXIT_OK


def cmd_population(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    pop = scn.population()
    sys = scn.system()
    if not sys.domain.has_initial_line:
        raise ScenarioError("population runs need a half-strip domain", "/domain/kind")
    phi = scn.initial()
    if phi is None:
        raise ScenarioError("population runs need initial data", "/initial")
    cfg = _config(scn, args)
    bundle = solve_ibvp(sys, scn.boundary(), phi, scn.t_end, cfg, initial=_warm_start(scn, False))
    oracle = renewal_boundary(pop, phi[0], scn.t_end, nx=cfg.nx, T0=sys.domain.T)
    t = bundle.u.t
    dev = float(np.max(np.abs(bundle.u.values[0, 0] - oracle(t))))
    bundle.u.to_csv(outdir / "field.csv")
    _write_rows(outdir / "birth.csv", ["t", "u0_solver", "u0_renewal"],
                [(float(a), float(b), float(c)) for a, b, c in zip(t, bundle.u.values[0, 0], oracle(t))])
    return {"solution": bundle.to_dict(), "renewal_deviation": dev}, EXIT_OK


def cmd_fredholm(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    sys = scn.system()
    bc = scn.boundary()
    if not isinstance(bc, LinearReflection):
        raise ScenarioError("fredholm needs a reflection boundary", "/boundary/type")
    fr = scn.section("fredholm")
    s_max = args.smax if args.smax is not None else fr.get("s_max", 16)
    grid = PanelGrid.build(fr.get("panels", 8), fr.get("order", 8), sys.breakpoints())
    prof = exponent_profiles(sys, grid)
    im = iso_margins(prof, bc.r0, bc.r1, s_max)
    rep = kernel_and_index(sys, bc, s_max, grid, gamma=fr.get("gamma", 0.0))
    report = {"iso_margins": im.to_dict(), "index": rep.to_dict(), "s_max": s_max, "nx": grid.size}
    rows = []
    for s in sorted(rep.kernel):
        for i, v in enumerate(rep.kernel[s].singular_values):
            rows.append((s, "matching", i, float(v)))
        for i, v in enumerate(rep.cokernel[s].singular_values):
            rows.append((s, "adjoint_matching", i, float(v)))
    op = build_discrete_D(sys, bc, s_max, grid, strict=False)
    decay = {}
    for s in range(-s_max, s_max + 1):
        if op.margin(s) <= 1e-10:
            continue
        D = op.weighted(op.block(s))
        sv = np.linalg.svd(D @ D, compute_uv=False)
        if sv[0] == 0.0:
            continue
        mid = sv[grid.size // 2 - 1]
        decay[str(s)] = float(sv[0] / mid) if mid > 0 else float("inf")
        rows.extend((s, "D2", i, float(v)) for i, v in enumerate(sv))
    report["d2_decay"] = decay
    _write_rows(outdir / "singular_values.csv", ["s", "kind", "index", "value"], rows)
    forcing = fr.get("forcing")
    if forcing is not None:
        nt = max(fr.get("nt", 4 * (s_max + 1)), 2 * s_max + 2)
        fns = [compile_expression(e, ("x", "t")) for e in forcing]
        _, t = GridFunction.periodic_grid(2, nt)
        vals = np.stack([fn(grid.nodes[:, None], t[None, :]) for fn in fns])
        F = to_modes(GridFunction(grid.nodes, t, vals, periodic=True), s_max, grid.weights)
        sol = fredholm_solve(sys, bc, F, grid, tol=args.tol or 1e-8)
        report["solve"] = sol.to_dict()
    return report, EXIT_OK


def cmd_trace(scn: Scenario, args, outdir: Path) -> tuple[dict, int]:
    """Debug dump of one characteristic curve as (xi, omega) samples."""
    sys = scn.system()
    sec = scn.section("trace")
    if not sec:
        raise ScenarioError("trace needs a trace section", "/trace")
    j = sec.get("component", 0)
    if j >= sys.n:
        raise ScenarioError(f"component {j} out of range for n={sys.n}", "/trace/component")
    path = trace(sys, j, sec["x"], sec["t"], tol=sec.get("tol", args.tol or DEFAULT_TOL))
    _write_rows(outdir / "trace.csv", ["xi", "omega"], zip(path.xi.tolist(), path.omega.tolist()))
    return {"trace": {"component": j, "anchor": [sec["x"], sec["t"]], "points": int(path.xi.size),
                      "clipped": path.clipped, "xi_range": [float(path.xi[0]), float(path.xi[-1])],
                      "omega_range": [float(path.omega.min()), float(path.omega.max())]}}, EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "solve-periodic": cmd_solve_periodic,
    "probe-smoothing": cmd_probe_smoothing,
    "population": cmd_population,
    "fredholm": cmd_fredholm,
    "trace": cmd_trace,
}


# ---------------------------------------------------------------------------


def _resolution(text: str):
    try:
        nx, nt = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {text!r}") from None
    if nx < 2 or nt < 2:
        raise argparse.ArgumentTypeError("resolution needs at least 2 points per axis")
    return nx, nt


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypsmooth", description="Hyperbolic systems on a strip: checks, solves and smoothing probes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", help="output directory (default: scenario output.dir or '.')")
    p.add_argument("--threads", type=_positive_int, help="cap on BLAS/OpenMP worker threads")
    p.add_argument("--resolution", type=_resolution, help="grid size NxM (x by t)")
    p.add_argument("--smax", type=int, help="largest Fourier mode |s|")
    p.add_argument("--tol", type=float, help="iteration tolerance")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        scn = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    outdir = Path(args.out or scn.section("output").get("dir", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    limits = threadpool_limits(limits=args.threads) if args.threads else None
    report = {"command": args.command, "scenario": scn.digest, "version": __version__}
    try:
        body, code = COMMANDS[args.command](scn, args, outdir)
        report.update(body)
    except (ScenarioError, ExpressionError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except CoefficientError as exc:
        report.update(error=str(exc), witness=list(exc.location) if exc.location else None)
        code = EXIT_CONDITION
    except SolverError as exc:
        report.update(error=str(exc), slab=exc.slab, ratio=exc.ratio,
                      log=[r.to_dict() if hasattr(r, "to_dict") else str(r) for r in exc.log or []])
        for line in exc.log or []:
            log.warning("%s", line)
        code = EXIT_DIVERGED
    finally:
        if limits is not None:
            limits.restore_original_limits()
    report["exit_code"] = code
    (outdir / "report.json").write_text(dumps(report), encoding="utf-8")
    (outdir / "timing.json").write_text(dumps({"wall_time": time.perf_counter() - start}), encoding="utf-8")
    if code == EXIT_CONDITION:
        print(f"{args.command}: condition failed (see {outdir / 'report.json'})", file=_sys.stderr)
    elif code == EXIT_DIVERGED:
        print(f"{args.command}: iteration did not converge: {report.get('error')}", file=_sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
