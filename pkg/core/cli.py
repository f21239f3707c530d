"""qf-barriers: build, verify and draw barrier configurations from the shell."""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from core.errors import BuildError, ConfigFormatError, GeometryError, SolverError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2

SPEC_OPTIONS = ("epsilon", "bridge_width", "prime_bridge_width", "catenoid_offset", "delta",
                "prune_tol", "max_depth", "dl_margin")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _emit(data: Dict[str, Any], output: Optional[str]) -> None:
    from core.persistence import dumps

    text = dumps(data)
    if output:
        with open(output, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        logger.info(f"Wrote {output}")
    else:
        sys.stdout.write(text)


def _curve_json(curve, residual: float, area_deficit: Optional[float] = None) -> Dict[str, Any]:
    out = {
        "a": curve.neck_parameter,
        "dL": curve.plane_separation,
        "samples": [[float(t), float(r)] for t, r in curve.samples],
        "residual": residual,
    }
    if area_deficit is not None:
        out["area_deficit"] = area_deficit
    return out


def _catenoid_solve(args) -> int:
    from core.catenoid import mean_curvature_residual, solve_generating_curve

    curve = solve_generating_curve(args.neck)
    _emit(_curve_json(curve, mean_curvature_residual(curve)), args.output)
    return EXIT_OK


def _catenoid_for_distance(args) -> int:
    from core.catenoid import catenoids_for_distance, mean_curvature_residual

    solutions = catenoids_for_distance(args.dL)
    if not solutions:
        logger.warning(f"No catenoid with dL={args.dL}")
    _emit({"dL": args.dL,
           "catenoids": [_curve_json(s.curve, mean_curvature_residual(s.curve), s.area_deficit)
                         for s in solutions]}, args.output)
    return EXIT_OK


def _catenoid_thresholds(args) -> int:
    from core.catenoid import SolverParams, compute_thresholds

    estimates = compute_thresholds(args.tol, SolverParams.from_settings())
    _emit(estimates.to_json(), args.output)
    return EXIT_OK


def _limitset(args) -> int:
    from core.kleinian import InversionGroup, equator_chain, limit_set
    from core.persistence import read_config, write_cloud

    prune_tol, max_depth = args.prune_tol, args.max_depth
    if args.config:
        from core.construction import ConstructionSpec, build_geometry

        config = read_config(args.config)
        geometry = build_geometry(config) if isinstance(config, ConstructionSpec) else config
        chain = geometry.chain
        prune_tol = prune_tol or geometry.spec.prune_tol
        max_depth = max_depth or geometry.spec.max_depth
    else:
        chain = equator_chain(args.equator_circles)

    cloud = limit_set(InversionGroup.from_chain(chain), prune_tol or 1e-3, max_depth or 30, args.workers)
    if args.output:
        write_cloud(cloud, args.output)
    else:
        from core.persistence import SCHEMA_VERSION

        _emit(dict(cloud.to_json(), version=SCHEMA_VERSION), None)
    return EXIT_OK


def _spec_from_args(args):
    from core.persistence import load_default_spec, parse_spec

    overrides = {name: getattr(args, name) for name in SPEC_OPTIONS if getattr(args, name) is not None}
    try:
        base = load_default_spec(args.n).model_dump()
    except ConfigFormatError:
        base = {"N": args.n}
    return parse_spec(dict(base, **overrides), "<command line>")


def _construct(args) -> int:
    from core.construction import build_geometry
    from core.persistence import write_config

    spec = _spec_from_args(args)
    if args.spec_only:
        write_config(spec, args.output)
        return EXIT_OK
    geometry = build_geometry(spec)
    write_config(geometry, args.output)
    sides = ", ".join(f"{s.label}:{s.side.value if s.side else '?'}" for s in geometry.stations)
    logger.info(f"{len(geometry.stations)} stations, {len(geometry.chain)} chain circles ({sides})")
    return EXIT_OK


def _verify(args) -> int:
    from core.construction import ConstructionSpec, run_pipeline
    from core.persistence import read_config, write_certificate

    config = read_config(args.config)
    if isinstance(config, ConstructionSpec):
        certificate = run_pipeline(config, workers=args.workers)
    else:
        certificate = run_pipeline(config.spec, geometry=config, workers=args.workers)
    write_certificate(certificate, args.output)
    if args.svg:
        from core.render import configuration_scene, write_svg

        write_svg(configuration_scene(certificate.geometry), args.svg)

    for name, criterion in certificate.criteria().items():
        mark = "ok" if criterion["passed"] else "FAILED"
        logger.info(f"{name:28s} {mark:6s} margin={criterion['margin']}")
    print("VALID" if certificate.valid else "INVALID")
    return EXIT_OK if certificate.valid else EXIT_INVALID


def _search(args) -> int:
    from core.construction import search_spec
    from core.persistence import store_default_spec, write_certificate

    certificate = search_spec(_spec_from_args(args), attempts=args.attempts, workers=args.workers)
    write_certificate(certificate, args.output)
    if args.store:
        store_default_spec(certificate.spec)
    spec = certificate.spec
    logger.info(f"N={spec.N}: epsilon={spec.epsilon:.3g} bridge_width={spec.bridge_width:.3g} "
                f"delta={spec.delta:.3g}")
    print("VALID")
    return EXIT_OK


def _render(args) -> int:
    from core.render import (Projection, arrangement_scene, cloud_scene, configuration_scene, curve_scene,
                             parallel_scene, write_svg)
    from core.persistence import read_certificate, read_cloud, read_config

    projection = Projection(pole=tuple(args.pole), size=args.size)
    geometry = None
    if args.config:
        from core.construction import ConstructionSpec, build_geometry

        config = read_config(args.config)
        geometry = build_geometry(config) if isinstance(config, ConstructionSpec) else config

    if args.cloud:
        cloud = read_cloud(args.cloud)
        scene = cloud_scene(cloud, projection, curve=geometry.curve.points if geometry is not None else None)
    elif geometry is None:
        raise ConfigFormatError("render needs a config or --cloud", "<command line>")
    elif args.arrangement is not None:
        from core.construction import enumerate_arrangements

        arrangements = enumerate_arrangements(geometry.spec.N, geometry.stations)
        if not 0 <= args.arrangement < len(arrangements):
            raise ConfigFormatError(f"arrangement must lie in 0..{len(arrangements) - 1}", "<command line>")
        certificate = read_certificate(args.certificate) if args.certificate else None
        scene = arrangement_scene(geometry, arrangements[args.arrangement], certificate, projection)
    else:
        figures = {"parallel": parallel_scene, "curve": curve_scene, "configuration": configuration_scene}
        scene = figures[args.figure](geometry, projection)
    write_svg(scene, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qf-barriers", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    catenoid = commands.add_parser("catenoid", help="catenoids of revolution in hyperbolic space")
    catenoid_commands = catenoid.add_subparsers(dest="catenoid_command", required=True)
    solve = catenoid_commands.add_parser("solve", help="generating curve for one neck")
    solve.add_argument("--neck", type=float, required=True, help="neck distance a")
    solve.add_argument("-o", "--output", help="output JSON (stdout if omitted)")
    solve.set_defaults(handler=_catenoid_solve)
    for_distance = catenoid_commands.add_parser("for-distance", help="all catenoids with given dL")
    for_distance.add_argument("--dL", type=float, required=True, help="distance between the planes")
    for_distance.add_argument("-o", "--output")
    for_distance.set_defaults(handler=_catenoid_for_distance)
    thresholds = catenoid_commands.add_parser("thresholds", help="d0, d1 and the deficit table")
    thresholds.add_argument("--tol", type=float, default=1e-7)
    thresholds.add_argument("-o", "--output")
    thresholds.set_defaults(handler=_catenoid_thresholds)

    limitset = commands.add_parser("limitset", help="limit set cloud of a chain")
    limitset.add_argument("config", nargs="?", help="construction config; equator chain if omitted")
    limitset.add_argument("--prune-tol", type=float)
    limitset.add_argument("--max-depth", type=int)
    limitset.add_argument("--equator-circles", type=int, default=12)
    limitset.add_argument("--workers", type=int)
    limitset.add_argument("-o", "--output")
    limitset.set_defaults(handler=_limitset)

    construct = commands.add_parser("construct", help="build curve, stations and chain")
    construct.add_argument("--n", type=int, required=True, help="number of parallel circle pairs")
    for name in SPEC_OPTIONS:
        kind = int if name == "max_depth" else float
        construct.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    construct.add_argument("--spec-only", action="store_true", help="write the parameters without building")
    construct.add_argument("-o", "--output", required=True)
    construct.set_defaults(handler=_construct)

    verify = commands.add_parser("verify", help="certify every arrangement of a config")
    verify.add_argument("config")
    verify.add_argument("-o", "--output", required=True, help="certificate JSON")
    verify.add_argument("--svg", help="also draw the configuration")
    verify.add_argument("--workers", type=int)
    verify.set_defaults(handler=_verify)

    search = commands.add_parser("search", help="shrink the parameters until the certificate is VALID")
    search.add_argument("--n", type=int, required=True, help="number of parallel circle pairs")
    for name in SPEC_OPTIONS:
        kind = int if name == "max_depth" else float
        search.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    search.add_argument("--attempts", type=int, default=6)
    search.add_argument("--workers", type=int)
    search.add_argument("--store", action="store_true", help="write the VALID spec into the defaults file")
    search.add_argument("-o", "--output", required=True, help="certificate JSON")
    search.set_defaults(handler=_search)

    render = commands.add_parser("render", help="SVG figures")
    render.add_argument("config", nargs="?")
    render.add_argument("--cloud", help="limit set cloud JSON")
    render.add_argument("--certificate", help="certificate JSON for arrangement status")
    render.add_argument("--arrangement", type=int, help="arrangement index")
    render.add_argument("--figure", choices=("parallel", "curve", "configuration"), default="configuration")
    render.add_argument("--pole", type=float, nargs=3, default=(0.0, 0.0, 1.0), metavar=("X", "Y", "Z"))
    render.add_argument("--size", type=int, default=800)
    render.add_argument("-o", "--output", required=True)
    render.set_defaults(handler=_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (BuildError, ConfigFormatError, GeometryError, SolverError) as e:
        logger.error(str(e))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
