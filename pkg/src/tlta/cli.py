"""Command-line entry points: ``tlta run``, ``tlta compile-zone`` and ``tlta verify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import load_scenario
from .errors import ConfigError, InvariantBreach, TltaError
from .geometry import HexGrid, Polygon, collapse_op_onto_sp, compile_zones

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _err(msg: str) -> None:
    print(f"tlta: {msg}", file=sys.stderr)


def _summary(cfg, seed: int, seed_note: str, report, out: Path) -> str:
    d = report.to_dict()
    lines = [
        f"scenario: {cfg.name}",
        f"seed: {seed} ({seed_note})",
        f"zone: {', '.join(f'{k}={v}' for k, v in d['zone'].items())}; op_scale={d['op_scale']:g}",
        f"mobile terminals: {len(d['judder_count'])}",
        f"registrations: {d['registrations']} new, {d['refreshes']} refreshed; deregistrations: {d['deregistrations']}",
        f"attestations: {d['attestation']['accepted']} accepted, "
        f"rejected {json.dumps(d['attestation']['rejected'], sort_keys=True)}",
        f"handovers: {d['handovers']['attested']} attested, {d['handovers']['plain']} plain, "
        f"{d['handovers']['suppressed']} suppressed",
        f"judder (max new registrations per MT): {max(d['judder_count'].values(), default=0)}",
        f"violations: FunctionalEnforcement={d['violation_counts']['FunctionalEnforcement']} "
        f"AccessControl={d['violation_counts']['AccessControl']}",
        f"fixes: {d['fixes']['issued']} issued, {d['fixes']['dropped']} dropped",
        f"outputs: {out}",
    ]
    return "\n".join(lines) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    from .sim.verify import verify_text
    from .sim.world import simulate

    try:
        cfg = load_scenario(args.scenario)
        seed_note = "from --seed" if args.seed is not None else "scenario default"
        seed = args.seed if args.seed is not None else cfg.seed
        world = simulate(cfg, seed)
    except (ConfigError, TltaError) as exc:
        if isinstance(exc, InvariantBreach):
            _err(f"invariant breach: {exc}")
            return EXIT_INVARIANT
        _err(str(exc))
        return EXIT_CONFIG
    report = world.report()
    text = world.engine.log.text()
    failures = verify_text(text)

    out = Path(args.out) / f"{cfg.name}-s{seed}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.jsonl").write_text(text, encoding="utf-8")
        (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        summary = _summary(cfg, seed, seed_note, report, out)
        (out / "summary.txt").write_text(summary, encoding="utf-8")
    except OSError as exc:
        _err(f"cannot write outputs to {out}: {exc.strerror}")
        return EXIT_CONFIG
    print(summary, end="")
    if failures:
        name, msg = failures[0]
        _err(f"invariant breach ({name}): {msg}")
        return EXIT_INVARIANT
    return EXIT_OK


def _parse_polygon(text: str) -> Polygon:
    """``"x1,y1 x2,y2 ..."`` or a JSON list of pairs."""
    text = text.strip()
    try:
        if text.startswith("["):
            pts = json.loads(text)
        else:
            pts = [tuple(float(v) for v in pair.split(",")) for pair in text.split()]
    except ValueError as exc:
        raise ConfigError(f"--polygon: cannot parse vertices ({exc})") from None
    if any(len(p) != 2 for p in pts):
        raise ConfigError("--polygon: every vertex needs exactly two coordinates")
    try:
        return Polygon.of(pts)
    except TltaError as exc:
        raise ConfigError(f"--polygon: {exc}") from None


def cmd_compile_zone(args: argparse.Namespace) -> int:
    try:
        if args.scenario:
            cfg = load_scenario(args.scenario)
            pz = cfg.pz_polygon()
            grid = HexGrid(cfg.grid.cell_radius, cfg.grid.extent, tuple(cfg.grid.origin))
            op_scale = args.op_scale if args.op_scale is not None else cfg.service.op_scale
            layers = cfg.service.n_outer_layers
            op_mode = cfg.service.op_mode
        else:
            pz = _parse_polygon(args.polygon)
            grid = HexGrid(args.cell_radius, args.extent)
            op_scale = args.op_scale if args.op_scale is not None else 1.3
            layers = args.outer_layers
            op_mode = "scaled"
        zone = compile_zones(pz, grid, op_scale, layers)
        if op_mode == "sp":
            zone = collapse_op_onto_sp(zone)
    except (TltaError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG

    doc = zone.to_dict()
    try:
        out = Path(args.out)
        if out.suffix in (".yaml", ".yml"):
            out.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
        else:
            out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        _err(f"cannot write {args.out}: {exc.strerror or exc}")
        return EXIT_CONFIG
    for name, n in zone.counts().items():
        print(f"{name}={n}")
    print(f"op_scale requested={zone.requested_op_scale:g} effective={zone.op_scale:g}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    from .sim.verify import TruncatedLog, verify_text

    path = Path(args.log)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"cannot read log {path}: {exc.strerror}")
        return EXIT_CONFIG
    try:
        failures = verify_text(text)
    except TruncatedLog as exc:
        _err(f"truncated log {path}: {exc}")
        return EXIT_CONFIG
    if failures:
        name, msg = failures[0]
        print(f"FAIL {name}: {msg}")
        if len(failures) > 1:
            print(f"({len(failures) - 1} further violations)")
        return EXIT_INVARIANT
    print(f"OK {path}: ordering, conservation, registration and phase/policy checks hold")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlta", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write events, metrics and a summary")
    run.add_argument("--scenario", required=True, help="scenario file, or the name of a shipped scenario")
    run.add_argument("--seed", type=int, default=None, help="RNG seed (default: the scenario's seed)")
    run.add_argument("--out", default="runs", help="output directory (default: runs)")
    run.set_defaults(func=cmd_run)

    cz = sub.add_parser("compile-zone", help="compile pz into cell layers and perimeters")
    src = cz.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="take pz and the grid from a scenario")
    src.add_argument("--polygon", help='pz vertices as "x1,y1 x2,y2 ..." (metres)')
    cz.add_argument("--out", required=True, help="ZoneMap output (.json, or .yaml/.yml)")
    cz.add_argument("--cell-radius", type=float, default=100.0, help="with --polygon: cell radius (m)")
    cz.add_argument("--extent", type=int, default=8, help="with --polygon: grid extent in cells")
    cz.add_argument("--outer-layers", type=int, default=1, help="with --polygon: number of outer layers")
    cz.add_argument("--op-scale", type=float, default=None, help="requested op scale factor")
    cz.set_defaults(func=cmd_compile_zone)

    ver = sub.add_parser("verify", help="check the invariants of a written event log")
    ver.add_argument("--log", required=True, help="events.jsonl written by `tlta run`")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
