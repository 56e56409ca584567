"""Batch simulator and command line front end.

A scenario is a JSON document::

    {
      "name": "reference",
      "registry": "registry.json",            # optional, defaults to the shipped lots
      "origins": [{"name": "A", "lat": -26.0, "lon": 28.0}, ...],
        or "distances": {"A": {"1": 35.128, "2": 13.3258, ...}, ...},
      "spots": {"1": 3, "2": 5, ...},
        or "streams": ["cam1.jsonl", ...],
        or "stream_spec": "stream.json" | {...inline stream spec...},
      "alphas": [0.001, 0.01, ...],            # optional
      "tracker": {"tau_match": 0.5, ...},      # optional
      "reference_grid": {"0.5": {"A": "3", ...}, ...}   # optional, annotates differing cells
    }

Relative paths resolve against the scenario file's directory. The shipped
scenarios can be named directly: ``reference``, ``suburbs``, ``suburbs-stream``.

A stream spec describes synthetic camera output::

    {"cameras": [{"lot_id": "3", "camera_id": "cam-3", "spots": [[x0, y0, x1, y1], ...]}],
     "frames": 200, "jitter_px": 2.0, "dropout": 0.1, "seed": 42,
     "confidence": 0.9, "start_ms": 0, "interval_ms": 1000, "tau_match": 0.5}
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from parkrec.geo import GeoPoint, distance_matrix
from parkrec.occupancy import (
    OccupancyError,
    OccupancySnapshot,
    Registry,
    TrackerConfig,
    default_registry,
    load_registry,
    read_event_file,
    track_events,
)
from parkrec.perception import BBox, Detection, DetectionEvent, ObjectClass, WireFormatError, iou
from parkrec.recommender import NoAvailabilityError, RecommendationRequest, recommend, \
    recommend_with_fixed_distances

logger = logging.getLogger(__name__)

SWEEP_ALPHAS = (0.001, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.999)
EMPTY_CELL = "—"
BUILTIN_SCENARIOS = {"reference": "reference_scenario.json", "suburbs": "suburbs_scenario.json",
                     "suburbs-stream": "suburbs_stream_scenario.json"}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    registry: Registry
    alphas: tuple
    origins: Optional[dict] = None
    distances: Optional[dict] = None
    spots: Optional[dict] = None
    streams: Optional[list] = None
    tracker: TrackerConfig = TrackerConfig()
    reference_grid: Optional[dict] = None

    def __post_init__(self):
        if (self.origins is None) == (self.distances is None):
            raise ScenarioError("scenario needs exactly one of origins / distances")
        if (self.spots is None) == (self.streams is None):
            raise ScenarioError("scenario needs exactly one of spots / streams")
        if not self.alphas:
            raise ScenarioError("alphas must be non-empty")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ScenarioError(f"alpha {a} outside [0, 1]")
        lot_ids = self.registry.ids()
        if self.distances is not None:
            for origin, row in self.distances.items():
                if set(row) != set(lot_ids):
                    raise ScenarioError(f"distance row {origin!r} does not cover the registry lots")
        if self.spots is not None:
            unknown = set(self.spots) - set(lot_ids)
            if unknown:
                raise ScenarioError(f"spots given for unknown lots {sorted(unknown)}")

    @property
    def origin_names(self) -> list:
        return list(self.origins if self.origins is not None else self.distances)

    def spot_counts(self) -> dict:
        """Free spots per lot: as given, or from running the tracker over the streams."""
        if self.spots is not None:
            return {lot_id: int(self.spots.get(lot_id, 0)) for lot_id in self.registry.ids()}
        events = [event for stream in self.streams for event in stream]
        return track_events(events, self.registry, self.tracker).counts()


def builtin_scenario_path(name: str) -> Path:
    return Path(str(resources.files("parkrec").joinpath("data", BUILTIN_SCENARIOS[name])))


def _resolve(path_like, base: Path) -> Path:
    path = Path(path_like)
    return path if path.is_absolute() else base / path


def load_scenario(path) -> Scenario:
    if str(path) in BUILTIN_SCENARIOS and not Path(path).exists():
        path = builtin_scenario_path(str(path))
    path = Path(path)
    base = path.parent
    doc = json.loads(path.read_text())
    registry = load_registry(_resolve(doc["registry"], base)) if doc.get("registry") else default_registry()

    origins = None
    if "origins" in doc:
        origins = {}
        for item in doc["origins"]:
            if item["name"] in origins:
                raise ScenarioError(f"duplicate origin {item['name']!r}")
            origins[item["name"]] = GeoPoint(item["lat"], item["lon"])
    distances = doc.get("distances")
    if distances is not None:
        distances = {o: {str(k): float(v) for k, v in row.items()} for o, row in distances.items()}

    streams = None
    if "streams" in doc:
        streams = [read_event_file(_resolve(p, base)) for p in doc["streams"]]
    if "stream_spec" in doc:
        if streams is not None:
            raise ScenarioError("give streams or stream_spec, not both")
        spec = doc["stream_spec"]
        spec = StreamSpec.from_dict(spec if isinstance(spec, dict) else json.loads(_resolve(spec, base).read_text()))
        streams = [[DetectionEvent.from_json(line) for line in generate_stream(spec)]]

    spots = doc.get("spots")
    if spots is not None:
        spots = {str(k): int(v) for k, v in spots.items()}
    return Scenario(
        name=doc.get("name", path.stem),
        registry=registry,
        alphas=tuple(float(a) for a in doc.get("alphas", SWEEP_ALPHAS)),
        origins=origins,
        distances=distances,
        spots=spots,
        streams=streams,
        tracker=TrackerConfig.from_dict(doc.get("tracker")),
        reference_grid=doc.get("reference_grid"),
    )


@dataclass
class DistanceTable:
    origins: list
    lot_ids: list
    km: np.ndarray


def build_distance_table(scenario: Scenario) -> DistanceTable:
    if scenario.origins is None:
        raise ScenarioError("scenario uses a fixed distance matrix; nothing to compute")
    names = list(scenario.origins)
    km = distance_matrix([scenario.origins[n] for n in names], list(scenario.registry))
    return DistanceTable(names, scenario.registry.ids(), km)


def scenario_distances(scenario: Scenario) -> dict:
    """``{origin: {lot_id: km}}`` in scenario and registry order."""
    if scenario.distances is not None:
        ids = scenario.registry.ids()
        return {o: {lot_id: row[lot_id] for lot_id in ids} for o, row in scenario.distances.items()}
    table = build_distance_table(scenario)
    return {o: dict(zip(table.lot_ids, map(float, table.km[j]))) for j, o in enumerate(table.origins)}


@dataclass
class Grid:
    alphas: list
    origins: list
    cells: list                     # [alpha][origin] -> lot id or None
    scores: list = field(default_factory=list)   # [alpha][origin] -> per-lot score dicts
    warnings: list = field(default_factory=list)
    reference: Optional[dict] = None

    def cell(self, alpha: float, origin: str):
        return self.cells[self.alphas.index(alpha)][self.origins.index(origin)]

    def differs_from_reference(self, a: int, o: int) -> bool:
        if not self.reference:
            return False
        row = self.reference.get(_alpha_label(self.alphas[a])) or {}
        expected = row.get(self.origins[o])
        return expected is not None and str(expected) != str(self.cells[a][o])


def build_recommendation_grid(scenario: Scenario) -> Grid:
    distances = scenario_distances(scenario)
    spots = scenario.spot_counts()
    origins = list(distances)
    grid = Grid(list(scenario.alphas), origins, [], [], [], scenario.reference_grid)
    for alpha in scenario.alphas:
        row, score_row = [], []
        for origin in origins:
            d = distances[origin]
            score_row.append([
                {"lot_id": lot_id, "distance_km": km, "spots": spots[lot_id],
                 "objective": alpha * km + (1 - alpha) / spots[lot_id] if spots[lot_id] else None}
                for lot_id, km in d.items()
            ])
            try:
                row.append(recommend_with_fixed_distances(d, spots, alpha).best.lot_id)
            except NoAvailabilityError:
                grid.warnings.append(f"alpha={alpha} origin={origin}: every lot is full")
                row.append(None)
        grid.cells.append(row)
        grid.scores.append(score_row)
    for message in grid.warnings:
        logger.warning(message)
    return grid


def _alpha_label(alpha: float) -> str:
    return repr(float(alpha))


@dataclass
class Report:
    csv: str
    text: str


def _text_table(header: list, rows: list) -> str:
    widths = [max(len(str(r[c])) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines) + "\n"


def render_report(table) -> Report:
    """CSV plus aligned text for a :class:`Grid` or :class:`DistanceTable`."""
    if isinstance(table, DistanceTable):
        header = ["origin"] + list(table.lot_ids)
        rows = [[o] + [f"{v:.4f}" for v in table.km[j]] for j, o in enumerate(table.origins)]
        text_rows, notes = rows, []
    else:
        header = ["alpha"] + list(table.origins)
        rows, text_rows = [], []
        for a, alpha in enumerate(table.alphas):
            values = [EMPTY_CELL if c is None else str(c) for c in table.cells[a]]
            rows.append([_alpha_label(alpha)] + values)
            marked = [v + ("*" if table.differs_from_reference(a, o) else "") for o, v in enumerate(values)]
            text_rows.append([_alpha_label(alpha)] + marked)
        notes = []
        if any("*" in v for r in text_rows for v in r[1:]):
            notes.append("* differs from reference_grid; computed value shown")
        notes.extend(f"warning: {w}" for w in table.warnings)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = _text_table(header, text_rows)
    if notes:
        text += "\n" + "\n".join(notes) + "\n"
    return Report(buf.getvalue(), text)


def render_scores(grid: Grid) -> str:
    """Every lot's distance, spots and objective for every grid cell, as CSV."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["alpha", "origin", "lot_id", "distance_km", "spots", "objective", "chosen"])
    for a, alpha in enumerate(grid.alphas):
        for o, origin in enumerate(grid.origins):
            for entry in grid.scores[a][o]:
                obj = entry["objective"]
                writer.writerow([_alpha_label(alpha), origin, entry["lot_id"], repr(entry["distance_km"]),
                                 entry["spots"], "" if obj is None else repr(obj),
                                 int(entry["lot_id"] == grid.cells[a][o])])
    return buf.getvalue()


@dataclass(frozen=True)
class StreamSpec:
    cameras: tuple
    frames: int
    jitter_px: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    confidence: float = 0.9
    start_ms: int = 0
    interval_ms: int = 1000
    tau_match: float = 0.5

    def __post_init__(self):
        if self.frames < 1:
            raise ScenarioError("frames must be at least 1")
        if self.jitter_px < 0 or not 0.0 <= self.dropout <= 1.0:
            raise ScenarioError("jitter_px must be >= 0 and dropout in [0, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ScenarioError("confidence must be in [0, 1]")
        # Rounding to 2 decimals can move a coordinate by 0.005 px.
        shift = self.jitter_px + 0.01
        for cam in self.cameras:
            for box in cam["spots"]:
                moved = BBox(box.x_min + shift, box.y_min + shift, box.x_max + shift, box.y_max + shift)
                if iou(box, moved) < self.tau_match:
                    raise ScenarioError(
                        f"jitter {self.jitter_px}px can push spot {box.as_list()} below IoU {self.tau_match}")

    @classmethod
    def from_dict(cls, obj: dict) -> "StreamSpec":
        obj = dict(obj)
        try:
            cams = tuple({"lot_id": str(c["lot_id"]), "camera_id": str(c["camera_id"]),
                          "spots": tuple(BBox(*b) for b in c["spots"])} for c in obj.pop("cameras"))
            return cls(cameras=cams, **obj)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"bad stream spec: {exc}") from None


def generate_stream(spec: StreamSpec, seed: Optional[int] = None) -> list:
    """Wire-format event lines: one event per camera per frame.

    Every spot is shifted by a uniform translation of at most ``jitter_px``
    on each axis and dropped with probability ``dropout``.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    lines = []
    for frame in range(spec.frames):
        for cam in spec.cameras:
            detections = []
            for box in cam["spots"]:
                dx, dy = rng.uniform(-spec.jitter_px, spec.jitter_px, size=2)
                dropped = rng.random() < spec.dropout
                if dropped:
                    continue
                dx, dy = max(dx, -box.x_min), max(dy, -box.y_min)
                moved = BBox(round(box.x_min + dx, 2), round(box.y_min + dy, 2),
                             round(box.x_max + dx, 2), round(box.y_max + dy, 2))
                detections.append(Detection(ObjectClass.PARKING, moved, spec.confidence))
            event = DetectionEvent(cam["camera_id"], cam["lot_id"], frame,
                                   spec.start_ms + frame * spec.interval_ms, tuple(detections))
            lines.append(event.to_json())
    return lines


def write_stream(spec: StreamSpec, path, seed: Optional[int] = None) -> int:
    lines = generate_stream(spec, seed)
    Path(path).write_text("".join(line + "\n" for line in lines))
    return len(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_spots(text: str) -> dict:
    out = {}
    for part in text.split(","):
        lot_id, sep, m = part.partition("=")
        if not sep:
            raise ValueError(f"bad --spots entry {part!r}; expected lot=count")
        out[lot_id.strip()] = int(m)
    return out


def _cmd_distances(args) -> int:
    report = render_report(build_distance_table(load_scenario(args.scenario)))
    sys.stdout.write(report.csv if args.csv else report.text)
    return 0


def _cmd_grid(args) -> int:
    grid = build_recommendation_grid(load_scenario(args.scenario))
    report = render_report(grid)
    sys.stdout.write(report.csv if args.csv else report.text)
    if args.scores:
        Path(args.scores).write_text(render_scores(grid))
    return 0


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if scenario.origins is not None:
        dist = render_report(build_distance_table(scenario))
        print(f"Distances (km), scenario {scenario.name}")
        sys.stdout.write(dist.text + "\n")
        if out:
            (out / "distances.csv").write_text(dist.csv)
    grid = build_recommendation_grid(scenario)
    spots = scenario.spot_counts()
    print("Free spots: " + ", ".join(f"{k}={v}" for k, v in spots.items()))
    print(f"Recommended lot per alpha and origin, scenario {scenario.name}")
    report = render_report(grid)
    sys.stdout.write(report.text)
    if out:
        (out / "grid.csv").write_text(report.csv)
        (out / "scores.csv").write_text(render_scores(grid))
    return 0


def _cmd_gen_stream(args) -> int:
    spec = StreamSpec.from_dict(json.loads(Path(args.spec).read_text()))
    n = write_stream(spec, args.output, args.seed)
    print(f"wrote {n} events to {args.output}")
    return 0


def _registry(args) -> Registry:
    return load_registry(args.registry) if args.registry else default_registry()


def _cmd_track(args) -> int:
    registry = _registry(args)
    config = TrackerConfig.load(args.tracker) if args.tracker else TrackerConfig()
    state = track_events(read_event_file(args.eventlog), registry, config)
    for lot in registry:
        print(f"{lot.lot_id}\t{state.available_spots(lot.lot_id)}\t{lot.name}")
    return 0


def _cmd_recommend(args) -> int:
    registry = _registry(args)
    if args.eventlog:
        counts = track_events(read_event_file(args.eventlog), registry).counts()
    else:
        counts = _parse_spots(args.spots)
        unknown = set(counts) - set(registry.ids())
        if unknown:
            raise ValueError(f"unknown lots in --spots: {sorted(unknown)}")
    request = RecommendationRequest(GeoPoint(args.lat, args.lon), args.alpha, args.top_k)
    rec = recommend(OccupancySnapshot(0, 0, counts), registry, request)
    if args.json:
        print(json.dumps(rec.to_dict(), indent=2))
        return 0
    print(f"best: lot {rec.best.lot_id} ({registry[rec.best.lot_id].name})")
    rows = [[i + 1, s.lot_id, f"{s.distance_km:.4f}", s.spots, f"{s.objective:.5f}"] for i, s in enumerate(rec.ranked)]
    sys.stdout.write(_text_table(["rank", "lot", "km", "spots", "objective"], rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parkrec-sim", description="Parking recommendation simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="distance table, grid and reports for a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--out", help="directory for CSV reports")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("distances", help="origin-to-lot distance table")
    p.add_argument("scenario")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=_cmd_distances)

    p = sub.add_parser("grid", help="recommended lot for every alpha and origin")
    p.add_argument("scenario")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--scores", help="write the per-lot score dump to this CSV file")
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("gen-stream", help="synthetic detection-event log")
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gen_stream)

    p = sub.add_parser("track", help="final free-spot count per lot for an event log")
    p.add_argument("eventlog")
    p.add_argument("--registry")
    p.add_argument("--tracker", help="tracker config JSON")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("recommend", help="one-shot offline recommendation")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--top-k", type=int)
    p.add_argument("--registry")
    p.add_argument("--json", action="store_true")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spots", help="free spots per lot, e.g. 1=3,2=5")
    src.add_argument("--eventlog", help="derive free spots by tracking this event log")
    p.set_defaults(func=_cmd_recommend)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except NoAvailabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, OccupancyError, WireFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
