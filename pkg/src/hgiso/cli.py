"""Command-line interface: ``hgiso <command> [options]``.

Every command writes JSON (or CSV for sampled data) to ``--out-dir`` when given and
prints a JSON summary. The exit code is 0 iff all enabled checks pass; ``--no-check``
disables the checks of a command.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable

from .bodies import load_body, sigma_points, sigma_structure
from .core import HPoint, group_mul
from .curvature import curvature_residual, default_region
from .flow import field_v, fit_circle, integrate_flows, lattice_seeds
from .geodesics import cc_distance, geodesic_curve
from .harness import (
    ExperimentConfig,
    compare_candidates,
    first_variation,
    random_bumps,
    reconstruct_bubble,
    write_comparison,
)
from .measure import measure_body


def _emit(args, name: str, payload: dict, extra: dict[str, Callable[[], str]] | None = None) -> None:
    """Print the JSON summary; with --out-dir also write it and the lazily built extra files."""
    text = json.dumps(payload, indent=2, default=float)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text)
        for fname, content in (extra or {}).items():
            (out / fname).write_text(content())
    print(text)


def _body(args, config: ExperimentConfig):
    return load_body(args.body) if args.body else config.load_body()


def cmd_mul(args, config) -> bool:
    p = group_mul(HPoint.parse(args.p), HPoint.parse(args.q))
    _emit(args, "mul", {"product": [p.x, p.y, p.t]})
    return True


def cmd_dist(args, config) -> bool:
    _emit(args, "dist", {"distance": cc_distance(HPoint.parse(args.p), HPoint.parse(args.q))})
    return True


def cmd_geodesic(args, config) -> bool:
    p, q = HPoint.parse(args.p), HPoint.parse(args.q)
    curve = geodesic_curve(p, q, args.n)
    length = curve.ds * (len(curve) - 1)
    _emit(args, "geodesic", {"length": length, "distance": cc_distance(p, q), "samples": len(curve)},
          {"geodesic.csv": curve.to_csv})
    return True


def cmd_measure(args, config) -> bool:
    body = _body(args, config)
    rep = measure_body(body, args.n or config.quadrature_n)
    _emit(args, "measure", json.loads(rep.to_json()))
    return True


def cmd_curvature(args, config) -> bool:
    body = _body(args, config)
    H = args.H if args.H is not None else measure_body(body, 1024).curvature_H
    spacing = args.spacing or (config.spacing if args.chart == "bottom" else config.spacing_yt)
    res = curvature_residual(body, args.chart, spacing, H, order=args.order,
                             region=default_region(body, args.chart))
    tol = config.tolerances["curvature_xy" if args.chart == "bottom" else "curvature_yt"]
    ok = res.linf_norm <= tol
    _emit(args, "curvature", {"chart": args.chart, "H": H, "spacing": spacing, "order": args.order,
                              "linf": res.linf_norm, "l1": res.l1_norm, "tolerance": tol, "pass": ok},
          {"curvature_residual.csv": res.to_csv})
    return ok


def cmd_flow(args, config) -> bool:
    body = _body(args, config)
    H = args.H if args.H is not None else measure_body(body, 1024).curvature_H
    lat = config.seed_lattice
    field = field_v(body, "bottom")
    seeds = lattice_seeds(body, lat["spacing"], lat["r_min"], lat["r_max"])
    pts, alive = integrate_flows(field, seeds, config.flow_rho)
    tol_r, tol_rms = config.tolerances["circle_radius"], config.tolerances["circle_rms"]
    rows = []
    ok = bool(alive.all()) and len(seeds) > 0
    for k, seed in enumerate(seeds):
        fit = fit_circle(pts[:, k, :])
        good = bool(alive[k]) and abs(fit.radius - 1.0 / H) <= tol_r and fit.clockwise and fit.rms_residual <= tol_rms
        ok &= good
        rows.append({"seed": seed.tolist(), **fit.to_dict(), "pass": good})
    _emit(args, "flow", {"H": H, "n_seeds": len(seeds), "pass": ok, "traces": rows})
    return ok


def cmd_variation(args, config) -> bool:
    body = _body(args, config)
    rep = measure_body(body, config.quadrature_n)
    rows, ok = [], True
    for bump in random_bumps(body, config.n_bumps, seed=config.seed):
        r = first_variation(body, bump, config.variation_delta, config.bump_nodes, measures=rep)
        good = abs(r.fd_derivative) <= config.tolerances["fd_variation"] * bump.sup_norm \
            and abs(r.analytic_form) <= config.tolerances["analytic_variation"]
        ok &= good
        rows.append({**r.to_dict(), "pass": good})
    _emit(args, "variation", {"body": body.tag, "pass": ok, "bumps": rows})
    return ok


def cmd_compare(args, config) -> bool:
    result = compare_candidates(config)
    if args.out_dir:
        write_comparison(result, args.out_dir)
    print(result.to_csv(), end="")
    return result.bubble_minimal


def cmd_reconstruct(args, config) -> bool:
    rep = reconstruct_bubble(args.H, args.n_geodesics or config.n_geodesics, config.lift_samples)
    ok = rep.max_deviation <= config.tolerances["reconstruction"] * max(1.0, (2.0 / args.H) ** 2)
    _emit(args, "reconstruct", {**rep.to_dict(), "pass": ok})
    return ok


def cmd_sigma(args, config) -> bool:
    body = _body(args, config)
    pts = sigma_points(body, args.spacing, method=args.method)
    rep = sigma_structure(pts, args.spacing)
    _emit(args, "sigma", {"body": body.tag, "n_points": len(pts), **rep.to_dict(), "pass": rep.ok})
    return rep.ok


COMMANDS = {
    "mul": cmd_mul, "dist": cmd_dist, "geodesic": cmd_geodesic, "measure": cmd_measure,
    "curvature": cmd_curvature, "flow": cmd_flow, "variation": cmd_variation, "compare": cmd_compare,
    "reconstruct": cmd_reconstruct, "sigma": cmd_sigma,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgiso", description="Isoperimetric experiments in the Heisenberg group.")
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--out-dir", help="directory for CSV/JSON outputs")
    parser.add_argument("--threads", type=int, help="worker threads for parallel experiments")
    parser.add_argument("--no-check", action="store_true", help="always exit 0 after a successful run")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("mul", "dist"):
        p = sub.add_parser(name, help=f"group {'product' if name == 'mul' else 'CC distance'} of two points")
        p.add_argument("p", help="x,y,t")
        p.add_argument("q", help="x,y,t")
    p = sub.add_parser("geodesic", help="sampled minimizing geodesic between two points")
    p.add_argument("p")
    p.add_argument("q")
    p.add_argument("--n", type=int, default=201)

    def body_arg(p):
        p.add_argument("--body", help="body as JSON text or path (default: the configured body)")

    p = sub.add_parser("measure", help="volume, perimeter, I and H of a body")
    body_arg(p)
    p.add_argument("--n", type=int)
    p = sub.add_parser("curvature", help="residual of the constant-curvature equation on a chart")
    body_arg(p)
    p.add_argument("--chart", choices=["bottom", "left"], default="bottom")
    p.add_argument("--spacing", type=float)
    p.add_argument("--order", type=int, choices=[2, 4], default=4)
    p.add_argument("--H", type=float)
    p = sub.add_parser("flow", help="circle fits of flow traces from a seed lattice")
    body_arg(p)
    p.add_argument("--H", type=float)
    p = sub.add_parser("variation", help="first variation of I under random bumps")
    body_arg(p)
    sub.add_parser("compare", help="compare I over the configured candidates")
    p = sub.add_parser("reconstruct", help="rebuild the bubble from curvature-H geodesics")
    p.add_argument("--H", type=float, default=2.0)
    p.add_argument("--n-geodesics", type=int)
    p = sub.add_parser("sigma", help="characteristic set and its segment structure")
    body_arg(p)
    p.add_argument("--spacing", type=float, default=0.02)
    p.add_argument("--method", choices=["subdiff", "gradient"], default="subdiff")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.threads is not None:
        doc["threads"] = args.threads
    if args.out_dir is not None:
        doc["out_dir"] = args.out_dir
    elif doc.get("out_dir"):
        args.out_dir = doc["out_dir"]
    try:
        config = ExperimentConfig.from_dict(doc)
        ok = COMMANDS[args.command](args, config)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok or args.no_check else 1


if __name__ == "__main__":
    sys.exit(main())
