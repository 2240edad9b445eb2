"""Command-line entry point: ``risoran <group> <action> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import codebook_io
from .e2lite import RanEndpoint, RisController, listen, run_client, serve_endpoint
from .harness import (GridSpec, load_output, run_coverage, run_mobility, scenario_codebook, summarize,
                      write_outputs, xapp_config_for)
from .phy import RisAperture, SteeringPair, search_pre_phase
from .scenario import ScenarioConfig, load_scenario
from .xapp import XappEndpoint

log = logging.getLogger("risoran")


def _scenario(args) -> ScenarioConfig:
    sc = load_scenario(args.config, getattr(args, "trajectory", None))
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    interval = getattr(args, "report_interval_ms", None)
    if interval is not None:
        if interval <= 0:
            raise SystemExit("--report-interval-ms must be positive")
        sc = replace(sc, tick_interval=interval / 1000.0)
    return sc


def _xapp_config(args, sc: ScenarioConfig, codebook):
    return xapp_config_for(sc, codebook, algorithm=getattr(args, "algorithm", None),
                           ris_step_deg=getattr(args, "ris_step", None),
                           ue_adapt_period=getattr(args, "ue_adapt_period", None))


def _step(args, sc: ScenarioConfig) -> int:
    return args.ris_step if getattr(args, "ris_step", None) else int(sc.xapp.get("ris_step_deg", 2))


def cmd_codebook_build(args) -> int:
    sc = _scenario(args)
    if args.optimize:
        steer = [SteeringPair.on_cut(a, sc.geometry.incident_angles()) for a in range(20, 61, 10)]
        found = search_pre_phase(sc.aperture.n_elements_per_side, args.candidates, steer,
                                 seed=args.seed or 0, element_spacing=sc.aperture.element_spacing,
                                 carrier_frequency=sc.aperture.carrier_frequency)
        log.info("pre-phase seed %d, worst mirror lobe %.1f dB", found.seed, found.worst_lobe_db)
        sc = replace(sc, aperture=RisAperture.with_seed(
            sc.aperture.n_elements_per_side, found.seed, element_spacing=sc.aperture.element_spacing,
            carrier_frequency=sc.aperture.carrier_frequency, efficiency=sc.aperture.efficiency))
    codebook = scenario_codebook(sc, _step(args, sc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = codebook_io.save(codebook, out / f"codebook_{_step(args, sc)}deg.risc")
    info = {"path": str(path), "codewords": len(codebook), "angles_deg": [float(a) for a in codebook.angles],
            "pre_phase_seed": sc.aperture.pre_phase_seed}
    print(json.dumps(info, indent=2))
    return 0


def cmd_coverage_run(args) -> int:
    sc = _scenario(args)
    grid = run_coverage(sc, GridSpec(), step_deg=_step(args, sc))
    paths = write_outputs(args.out, f"coverage_{sc.name}", grid)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


def cmd_mobility_run(args) -> int:
    sc = _scenario(args)
    codebook = scenario_codebook(sc, _step(args, sc))
    cfg = _xapp_config(args, sc, codebook)
    trace = run_mobility(sc, cfg, transport=args.transport, codebook=codebook)
    name = f"mobility_{sc.name}_{cfg.algorithm.value}_{cfg.ris_step_deg}deg_seed{sc.rng_seed}"
    paths = write_outputs(args.out, name, trace)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


def cmd_summarize(args) -> int:
    print(json.dumps(summarize(load_output(args.path)), indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    sc = _scenario(args)
    codebook = scenario_codebook(sc, _step(args, sc))
    if args.role == "ris":
        srv = listen(args.host, args.ris_port)
        log.info("RIS controller listening on %s:%d", *srv.getsockname()[:2])
        loop = serve_endpoint(RisController(codebook), srv)
    elif args.role == "ran":
        srv = listen(args.host, args.ran_port)
        log.info("RAN listening on %s:%d", *srv.getsockname()[:2])
        ran = RanEndpoint(sc, codebook)
        loop = serve_endpoint(ran, srv)
        if args.out:
            from .harness import ExperimentTrace
            trace = ExperimentTrace(ran.rows, meta={"scenario": sc.name, "seed": sc.rng_seed, "transport": "tcp",
                                                    "codebook_angles": [float(a) for a in codebook.angles]})
            write_outputs(args.out, f"mobility_{sc.name}_served_seed{sc.rng_seed}", trace)
    else:
        xapp = XappEndpoint(_xapp_config(args, sc, codebook), 0, sc.initial_ue_beam)
        loop = run_client(xapp, {"ran": (args.host, args.ran_port), "ris": (args.host, args.ris_port)})
    if loop.error is not None:
        log.error("%s endpoint stopped with an error: %s", args.role, loop.error)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risoran", description="RIS-assisted mmWave control-loop simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="group", required=True)

    def common(p, mobility=False):
        p.add_argument("--config", default="outdoor", help="preset name (indoor, outdoor) or scenario YAML path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
        p.add_argument("--ris-step", type=int, choices=(1, 2), default=None)
        if mobility:
            p.add_argument("--transport", choices=("memory", "tcp"), default="memory")
            p.add_argument("--algorithm", choices=("neighbor", "trend", "none"), default=None)
            p.add_argument("--report-interval-ms", type=int, default=None)
            p.add_argument("--trajectory", default=None, help="named route from the scenario file")
            p.add_argument("--ue-adapt-period", type=int, default=None)

    cb = sub.add_parser("codebook").add_subparsers(dest="action", required=True)
    p = cb.add_parser("build", help="synthesize and save a codebook")
    common(p)
    p.add_argument("--optimize", action="store_true", help="search random pre-phase candidates first")
    p.add_argument("--candidates", type=int, default=50)
    p.set_defaults(func=cmd_codebook_build)

    cov = sub.add_parser("coverage").add_subparsers(dest="action", required=True)
    p = cov.add_parser("run", help="RSRP gain map with and without the surface")
    common(p)
    p.set_defaults(func=cmd_coverage_run)

    mob = sub.add_parser("mobility").add_subparsers(dest="action", required=True)
    p = mob.add_parser("run", help="play a trajectory through the control loop")
    common(p, mobility=True)
    p.set_defaults(func=cmd_mobility_run)

    p = sub.add_parser("summarize", help="statistics for a trace or coverage CSV")
    p.add_argument("path")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("serve", help="run one endpoint over TCP")
    p.add_argument("role", choices=("ris", "ran", "xapp"))
    common(p, mobility=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ran-port", type=int, default=38470)
    p.add_argument("--ris-port", type=int, default=38471)
    p.set_defaults(func=cmd_serve, out=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
