"""Input loading, validation and result writing.

Inputs:
  buildings      GeoJSON FeatureCollection of Polygons with properties
                 floors, apartments, year, mu_ds and optional door [x, y]
  open spaces    GeoJSON FeatureCollection of Polygons with property locked
  elevation      ESRI ASCII grid
  config         JSON object of ScenarioConfig fields; ``casualty_table`` and
                 ``slope_curve`` may be inline or paths to CSV files

Validation collects every problem before failing, so a bundle is either
complete or rejected with the full list.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .engine import COUNT_COLUMNS, BuildingRecord, OpenSpaceRecord, ScenarioConfig, SimulationResult
from .geom import (
    ElevationGrid,
    GeometryError,
    Point2D,
    Polygon2D,
    boundary_distance,
    longest_edge_midpoint,
)
from .mobility import SpeedSlopeCurve
from .vulnerability import CasualtyTable, ConfigurationError

DOOR_TOLERANCE = 1e-6
GEOGRAPHIC_CRS_MARKERS = ("4326", "CRS84", "4269", "4979")


class BundleValidationError(ConfigurationError):
    pass


@dataclass
class InputBundle:
    buildings: list[BuildingRecord]
    open_spaces: list[OpenSpaceRecord]
    elevation: ElevationGrid
    config: ScenarioConfig


def derive_door(footprint: Polygon2D, door: Point2D | None = None) -> Point2D:
    """Given door, or the midpoint of the longest exterior edge."""
    return door if door is not None else longest_edge_midpoint(footprint)


def _read_json(path: Path, errors: list[str]) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        errors.append(f"{path}: cannot read ({exc.strerror})")
    except json.JSONDecodeError as exc:
        errors.append(f"{path}: invalid JSON ({exc})")
    return None


def _features(doc: Any, path: Path, errors: list[str]) -> list[tuple[int, dict, Polygon2D | None, dict]]:
    """(id, properties, polygon, feature) per feature; problems go to ``errors``."""
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        errors.append(f"{path}: expected a GeoJSON FeatureCollection")
        return []
    crs = json.dumps(doc.get("crs", "")).upper()
    if any(m in crs for m in GEOGRAPHIC_CRS_MARKERS):
        errors.append(f"{path}: geographic CRS declared; coordinates must be projected planar meters")
    out = []
    seen = set()
    for n, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        fid = feat.get("id", props.get("id", n + 1))
        where = f"{path}: feature {fid}"
        if not isinstance(fid, int) or isinstance(fid, bool):
            errors.append(f"{where}: id must be an integer")
            continue
        if fid in seen:
            errors.append(f"{where}: duplicate id")
        seen.add(fid)
        geom = feat.get("geometry") or {}
        coords = geom.get("coordinates")
        if geom.get("type") == "MultiPolygon" and isinstance(coords, list) and len(coords) == 1:
            coords = coords[0]
        elif geom.get("type") != "Polygon":
            errors.append(f"{where}: geometry must be a Polygon, got {geom.get('type')}")
            out.append((fid, props, None, feat))
            continue
        try:
            poly = Polygon2D(np.asarray(coords[0], dtype=float), tuple(np.asarray(h, dtype=float) for h in coords[1:]))
        except (GeometryError, ValueError, TypeError, IndexError) as exc:
            errors.append(f"{where}: invalid geometry ({exc})")
            poly = None
        out.append((fid, props, poly, feat))
    return out


def _int_prop(props, key, where, errors, minimum=None):
    v = props.get(key)
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int) or isinstance(v, bool):
        errors.append(f"{where}: property {key!r} must be an integer, got {v!r}")
        return None
    if minimum is not None and v < minimum:
        errors.append(f"{where}: property {key!r} must be >= {minimum}, got {v}")
        return None
    return v


def parse_buildings(doc: Any, path: Path, errors: list[str]) -> list[BuildingRecord]:
    records = []
    for fid, props, poly, _ in _features(doc, path, errors):
        where = f"{path}: building {fid}"
        floors = _int_prop(props, "floors", where, errors, minimum=1)
        apartments = _int_prop(props, "apartments", where, errors, minimum=1)
        year = _int_prop(props, "year", where, errors, minimum=1)
        mu = props.get("mu_ds")
        if not isinstance(mu, (int, float)) or isinstance(mu, bool) or not 0.0 <= mu <= 4.0:
            errors.append(f"{where}: property 'mu_ds' must be a number in [0, 4], got {mu!r}")
            mu = None
        door = None
        if props.get("door") is not None:
            try:
                dx, dy = props["door"]
                door = Point2D(float(dx), float(dy))
            except (TypeError, ValueError, GeometryError):
                errors.append(f"{where}: door must be [x, y]")
            else:
                if poly is not None and boundary_distance(Polygon2D(poly.exterior, validate=False), door) > DOOR_TOLERANCE:
                    errors.append(f"{where}: door {props['door']} is not on the footprint boundary")
        if None in (poly, floors, apartments, year, mu):
            continue
        records.append(BuildingRecord(fid, poly, floors, apartments, year, float(mu), derive_door(poly, door)))
    return records


def load_buildings(path: str | Path) -> list[BuildingRecord]:
    errors: list[str] = []
    doc = _read_json(Path(path), errors)
    recs = parse_buildings(doc, Path(path), errors) if doc is not None else []
    if errors:
        raise BundleValidationError(errors)
    return recs


def parse_open_spaces(doc: Any, path: Path, errors: list[str]) -> list[OpenSpaceRecord]:
    records = []
    for fid, props, poly, _ in _features(doc, path, errors):
        locked = props.get("locked", False)
        if not isinstance(locked, bool):
            errors.append(f"{path}: open space {fid}: property 'locked' must be true or false")
            continue
        if poly is not None:
            records.append(OpenSpaceRecord(fid, poly, locked))
    return records


def read_esri_ascii(path: str | Path) -> ElevationGrid:
    """Parse an ESRI ASCII grid. Raises ConfigurationError on malformed files."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read ({exc.strerror})") from None
    lines = text.splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(lines) and lines[i].strip() and lines[i].split()[0][0].isalpha():
        key, val = lines[i].split()[:2]
        header[key.lower()] = val
        i += 1
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cs = float(header["cellsize"])
        if "xllcorner" in header:
            x0, y0 = float(header["xllcorner"]), float(header["yllcorner"])
        else:
            x0, y0 = float(header["xllcenter"]) - cs / 2, float(header["yllcenter"]) - cs / 2
        nodata = float(header["nodata_value"]) if "nodata_value" in header else None
        values = np.array(" ".join(lines[i:]).split(), dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed ESRI ASCII grid ({exc})") from None
    if values.size != ncols * nrows:
        raise ConfigurationError(f"{path}: expected {ncols * nrows} values, found {values.size}")
    try:
        # file rows run north to south
        return ElevationGrid(Point2D(x0, y0), cs, ncols, nrows, values.reshape(nrows, ncols)[::-1], nodata)
    except GeometryError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def write_esri_ascii(grid: ElevationGrid, path: str | Path, fmt: str = "{:.3f}") -> None:
    lines = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {grid.origin.x!r}",
        f"yllcorner {grid.origin.y!r}",
        f"cellsize {grid.cell_size!r}",
        f"NODATA_value {grid.nodata if grid.nodata is not None else -9999}",
    ]
    for row in grid.values[::-1]:
        lines.append(" ".join(fmt.format(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def config_from_dict(data: dict[str, Any], base: Path | None = None) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError([f"unknown config key {k!r}" for k in unknown])
    kw = dict(data)
    table = kw.get("casualty_table")
    if isinstance(table, str):
        kw["casualty_table"] = CasualtyTable.from_csv(_resolve(table, base))
    elif isinstance(table, list):
        cols = ("typology", "damage_state", "setting", "rate")
        kw["casualty_table"] = CasualtyTable.from_rows(
            [dict(zip(cols, map(str, row))) for row in table], source="config casualty_table"
        )
    curve = kw.get("slope_curve")
    if isinstance(curve, str):
        kw["slope_curve"] = SpeedSlopeCurve.from_csv(_resolve(curve, base))
    elif isinstance(curve, list):
        kw["slope_curve"] = SpeedSlopeCurve.from_knots(curve)
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def _resolve(p: str, base: Path | None) -> Path:
    path = Path(p)
    return path if path.is_absolute() or base is None else base / path


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    errors: list[str] = []
    data = _read_json(Path(path), errors)
    if errors:
        raise ConfigurationError(errors)
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    try:
        return config_from_dict(data, Path(path).parent)
    except ConfigurationError as exc:
        raise ConfigurationError([f"{path}: {e}" for e in exc.errors]) from None


def scene_bounds(buildings, spaces) -> tuple[float, float, float, float] | None:
    boxes = [b.footprint.bounds for b in buildings] + [s.polygon.bounds for s in spaces]
    if not boxes:
        return None
    arr = np.array(boxes)
    return float(arr[:, 0].min()), float(arr[:, 1].min()), float(arr[:, 2].max()), float(arr[:, 3].max())


def load_bundle(
    buildings: str | Path,
    open_spaces: str | Path,
    dem: str | Path,
    config: str | Path | None = None,
) -> InputBundle:
    """Load and validate every input; raise BundleValidationError listing all problems."""
    errors: list[str] = []
    bdoc = _read_json(Path(buildings), errors)
    recs = parse_buildings(bdoc, Path(buildings), errors) if bdoc is not None else []
    sdoc = _read_json(Path(open_spaces), errors)
    spaces = parse_open_spaces(sdoc, Path(open_spaces), errors) if sdoc is not None else []
    if sdoc is not None and not spaces and not any(str(open_spaces) in e for e in errors):
        errors.append(f"{open_spaces}: at least one open space is required")
    grid = None
    try:
        grid = read_esri_ascii(dem)
    except ConfigurationError as exc:
        errors.extend(exc.errors)
    cfg = None
    try:
        cfg = load_config(config)
    except ConfigurationError as exc:
        errors.extend(exc.errors)
    if grid is not None:
        box = scene_bounds(recs, spaces)
        if box is not None and not grid.covers(box):
            errors.append(f"{dem}: grid extent {grid.extent} does not cover the scene {box}")
    if errors:
        raise BundleValidationError(errors)
    return InputBundle(recs, spaces, grid, cfg)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


SPACE_COLUMNS = (
    "space_id", "locked", "pct_population", "min_arrival_s", "max_arrival_s", "avg_arrival_s", "occupancy", "capacity",
)


def timeseries_svg(times, safe, total, width=640, height=360, pad=40) -> str:
    tmax = max(times[-1], 1.0) if len(times) else 1.0
    ymax = max(total, 1)
    pts = " ".join(
        f"{pad + (width - 2 * pad) * t / tmax:.2f},{height - pad - (height - 2 * pad) * s / ymax:.2f}"
        for t, s in zip(times, safe)
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">time (s)</text>\n'
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">safe persons</text>\n'
        f'<text x="{pad}" y="{pad - 6}" font-size="11">{ymax}</text>\n'
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="11" text-anchor="end">{tmax:g}</text>\n'
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{pts}"/>\n'
        "</svg>\n"
    )


def write_results(result: SimulationResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "timeseries": out / "timeseries.csv",
        "spaces": out / "spaces.csv",
        "summary": out / "summary.json",
        "svg": out / "timeseries.svg",
        "config": out / "config.json",
    }
    write_csv(paths["timeseries"], COUNT_COLUMNS, result.timeseries)
    write_csv(
        paths["spaces"],
        SPACE_COLUMNS,
        [tuple(getattr(s, c) for c in SPACE_COLUMNS) for s in result.spaces],
    )
    final = result.timeseries[-1]
    cfg_text = json.dumps(result.config, sort_keys=True, indent=2) + "\n"
    summary = {
        "total_residents": result.total_residents,
        "safe": final[1],
        "safe_fraction": final[1] / result.total_residents if result.total_residents else 0.0,
        "dead": final[4],
        "stranded": result.stranded,
        "duration_s": final[0],
        "seed": result.seed,
        "config_hash": hashlib.sha256(json.dumps(result.config, sort_keys=True).encode()).hexdigest(),
    }
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["config"].write_text(cfg_text)
    times = [r[0] for r in result.timeseries]
    paths["svg"].write_text(timeseries_svg(times, [r[1] for r in result.timeseries], result.total_residents))
    return paths


def read_timeseries(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_spaces(path: str | Path) -> list[dict[str, Any]]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rec = {k: float(v) for k, v in row.items() if k != "locked"}
            rec["locked"] = row["locked"] == "true"
            rows.append(rec)
        return rows


def polygon_feature(fid: int, poly: Polygon2D, props: dict, ndigits: int | None = None) -> dict:
    def ring(r):
        pts = [[float(x), float(y)] for x, y in r] + [[float(r[0][0]), float(r[0][1])]]
        if ndigits is not None:
            pts = [[round(x, ndigits), round(y, ndigits)] for x, y in pts]
        return pts

    return {
        "type": "Feature",
        "id": fid,
        "properties": props,
        "geometry": {"type": "Polygon", "coordinates": [ring(r) for r in poly.rings]},
    }


def feature_collection(features: list[dict]) -> dict:
    return {
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": "planar-meters"}},
        "features": features,
    }


def write_geojson(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")

