"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .debris import BuildingGeometryInput, make_debris_zone, solve_debris
from .engine import COUNT_COLUMNS, build_world, run
from .geom import equivalent_rectangle, polygon_area, polygon_perimeter
from .scenario_io import (
    feature_collection,
    load_buildings,
    load_bundle,
    polygon_feature,
    read_timeseries,
    write_csv,
    write_geojson,
    write_results,
)
from .synth import PRESETS, SynthSpecError, generate, write_city
from .vulnerability import ConfigurationError, normalize_mean_damage

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
COMPARE_TIMES = (60, 120, 180, 240, 300)
DEBRIS_COLUMNS = ("building_id", "x", "y", "h", "h_prime", "V", "k", "r", "x_p", "y_p", "h_t", "buffer")

log = logging.getLogger("qevac")


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _errors(exc: ConfigurationError) -> str:
    return "\n  ".join([""] + list(exc.errors)) if len(exc.errors) > 1 else str(exc.errors[0])


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integer ids, got {text!r}") from None


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("QEVAC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer QEVAC_THREADS=%r", env)
    return 1


def cmd_run(args: argparse.Namespace) -> int:
    try:
        bundle = load_bundle(args.buildings, args.open_spaces, args.dem, args.config)
    except ConfigurationError as exc:
        return _fail(_errors(exc), EXIT_INVALID)
    config = bundle.config
    if args.seed is not None:
        try:
            config = dataclasses.replace(config, seed=args.seed)
        except ConfigurationError as exc:
            return _fail(_errors(exc), EXIT_INVALID)
    spaces = bundle.open_spaces
    if args.lock:
        known = {s.id for s in spaces}
        missing = sorted(set(args.lock) - known)
        if missing:
            return _fail(f"--lock: no open space with id {', '.join(map(str, missing))}", EXIT_INVALID)
        locked = set(args.lock)
        spaces = [dataclasses.replace(s, locked=s.locked or s.id in locked) for s in spaces]
    try:
        world = build_world(bundle.buildings, spaces, bundle.elevation, config)
        result = run(world, threads=_threads(args.threads))
        write_results(result, args.out)
    except OSError as exc:
        return _fail(f"cannot write results: {exc}", EXIT_RUNTIME)
    except Exception as exc:  # noqa: BLE001
        log.exception("simulation failed")
        return _fail(f"simulation failed: {exc}", EXIT_RUNTIME)
    final = result.timeseries[-1]
    total, safe, dead = result.total_residents, final[1], final[COUNT_COLUMNS.index("dead")]
    pct = 100.0 * safe / total if total else 0.0
    print(f"total {total}, safe {safe}, safe {pct:.1f}%, dead {dead}")
    return EXIT_OK


def cmd_debris(args: argparse.Namespace) -> int:
    try:
        records = load_buildings(args.buildings)
    except ConfigurationError as exc:
        return _fail(_errors(exc), EXIT_INVALID)
    rows = []
    features = []
    try:
        for rec in records:
            rect = equivalent_rectangle(polygon_area(rec.footprint), polygon_perimeter(rec.footprint))
            inp = BuildingGeometryInput(rect.x, rect.y, rec.floors, normalize_mean_damage(rec.mu_ds))
            sol = solve_debris(inp, args.model, args.pile_height)
            rows.append((rec.id, rect.x, rect.y, sol.h, sol.h_prime, sol.V, sol.k, sol.r, sol.x_p, sol.y_p, sol.h_t, sol.buffer))
            zone = make_debris_zone(rec.footprint, sol.buffer)
            if zone is None:
                features.append({"type": "Feature", "id": rec.id, "properties": {"buffer": 0.0}, "geometry": None})
            else:
                features.append(polygon_feature(rec.id, zone, {"buffer": sol.buffer}))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "debris.csv", DEBRIS_COLUMNS, rows)
        write_geojson(feature_collection(features), out / "debris_zones.geojson")
    except OSError as exc:
        return _fail(f"cannot write results: {exc}", EXIT_RUNTIME)
    except ValueError as exc:
        return _fail(str(exc), EXIT_INVALID)
    print(f"{len(rows)} buildings, {sum(1 for r in rows if r[-1] > 0)} debris zones")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = PRESETS[args.preset] if args.preset else PRESETS["minimal"]
    overrides = {
        k: v
        for k, v in {
            "cols": args.cols,
            "rows": args.rows,
            "ring_spaces": args.ring_spaces,
            "center_space": args.center_space,
            "terrain": args.terrain,
            "grade": args.grade,
            "n_buildings": args.buildings,
            "total_apartments": args.apartments,
            "seed": args.seed,
        }.items()
        if v is not None
    }
    try:
        spec = dataclasses.replace(spec, **overrides)
        city = generate(spec)
        write_city(city, args.out)
    except SynthSpecError as exc:
        return _fail(str(exc), EXIT_INVALID)
    except OSError as exc:
        return _fail(f"cannot write bundle: {exc}", EXIT_RUNTIME)
    apartments = sum(b.apartments for b in city.buildings)
    print(f"{len(city.buildings)} buildings, {apartments} apartments, {len(city.open_spaces)} open spaces")
    return EXIT_OK


def _safe_at(rows: list[dict[str, float]], t: float) -> float:
    best = rows[0]
    for r in rows:
        if r["t"] <= t + 1e-9:
            best = r
    return best["safe"]


def _total(rows: list[dict[str, float]]) -> int:
    r = rows[0]
    return int(sum(r[c] for c in ("safe", "vulnerable", "in_danger", "dead", "unspawned")))


def cmd_compare(args: argparse.Namespace) -> int:
    runs = []
    for d in (args.a, args.b):
        path = Path(d) / "timeseries.csv"
        if not path.is_file():
            return _fail(f"{d}: no timeseries.csv (not a result directory)", EXIT_INVALID)
        try:
            runs.append(read_timeseries(path))
        except (OSError, ValueError, KeyError) as exc:
            return _fail(f"{path}: unreadable ({exc})", EXIT_INVALID)
    ta, tb = _total(runs[0]), _total(runs[1])
    if ta != tb:
        return _fail(f"resident totals differ: {ta} vs {tb}", EXIT_INVALID)
    rows = []
    print(f"{'t_s':>6} {'a_safe_%':>9} {'b_safe_%':>9} {'diff_pts':>9}")
    for t in COMPARE_TIMES:
        fa = 100.0 * _safe_at(runs[0], t) / ta if ta else 0.0
        fb = 100.0 * _safe_at(runs[1], t) / tb if tb else 0.0
        rows.append((t, fa, fb, fa - fb))
        print(f"{t:>6} {fa:>9.2f} {fb:>9.2f} {fa - fb:>9.2f}")
    final_a = 100.0 * runs[0][-1]["safe"] / ta if ta else 0.0
    final_b = 100.0 * runs[1][-1]["safe"] / tb if tb else 0.0
    print(f"final difference: {final_a - final_b:.2f} percentage points")
    out = Path(args.out) if args.out else Path(args.b) / "compare.csv"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(out, ("t", "safe_pct_a", "safe_pct_b", "diff_pts"), rows)
    except OSError as exc:
        return _fail(f"cannot write {out}: {exc}", EXIT_RUNTIME)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qevac", description="Post-earthquake pedestrian evacuation simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation")
    r.add_argument("--buildings", required=True)
    r.add_argument("--open-spaces", required=True)
    r.add_argument("--dem", required=True)
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--lock", type=_parse_ids, default=[], help="comma-separated open-space ids to lock")
    r.add_argument("--threads", type=int, help="worker threads (default: QEVAC_THREADS or 1)")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("debris", help="compute debris buffers for a building file")
    d.add_argument("--buildings", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--model", choices=("pyramid", "ring"), default="pyramid")
    d.add_argument("--pile-height", type=float, default=1.0)
    d.set_defaults(func=cmd_debris)

    s = sub.add_parser("synth", help="generate a synthetic city bundle")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--out", required=True)
    s.add_argument("--cols", type=int)
    s.add_argument("--rows", type=int)
    s.add_argument("--ring-spaces", type=int)
    s.add_argument("--center-space", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--terrain", choices=("flat", "ramp"))
    s.add_argument("--grade", type=float)
    s.add_argument("--buildings", type=int, help="exact building count")
    s.add_argument("--apartments", type=int, help="exact total apartment count")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("compare", help="compare two result directories")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", help="compare.csv path (default: inside the second directory)")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _fail("--threads must be >= 1", EXIT_INVALID)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
