"""Monte-Carlo recognition sweeps over distance or yaw, and their reports."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from ledmarker.codec import Dictionary, assign_frequencies, encode
from ledmarker.detector import DetectorConfig, detect, failure_stage
from ledmarker.errors import ConfigError, RecognitionFailed
from ledmarker.optics import (
    DEFAULT_GLOW,
    CameraModel,
    NoiseModel,
    ScenePose,
    band_width,
    load_json,
    render_frame,
)

FAILURE_STAGES = ("binarize", "quad", "bands", "decode")
CSV_COLUMNS = ("value", "trials", "successes", "rate") + tuple(f"fail_{s}" for s in FAILURE_STAGES)


def default_dictionary() -> Dictionary:
    """The shipped 16-entry 4x4 dictionary (min Hamming distance 4)."""
    text = resources.files("ledmarker").joinpath("data/default_dictionary.json").read_text()
    return Dictionary.from_dict(json.loads(text))


def preset_path(name: str) -> Path:
    """Filesystem path of a shipped preset such as ``paper_distance.json``."""
    return Path(str(resources.files("ledmarker").joinpath("presets", name)))


def resolve_dictionary(ref: str | None) -> Dictionary:
    if ref in (None, "default"):
        return default_dictionary()
    return Dictionary.load(ref)


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple[float, ...]
    trials_per_value: int = 300
    base_pose: ScenePose = ScenePose()
    camera: CameraModel = CameraModel()
    noise: NoiseModel = NoiseModel()
    dict_ref: str | None = "default"
    marker_id: int = 0
    frequencies: tuple[float, float] = (500.0, 2000.0)
    duty: float = 0.5
    glow: float = DEFAULT_GLOW
    seed: int = 0
    detector: DetectorConfig = DetectorConfig()
    description: str = ""

    def __post_init__(self):
        if self.variable not in ("distance", "yaw"):
            raise ConfigError(f"variable must be 'distance' or 'yaw', got {self.variable!r}")
        if not self.values:
            raise ConfigError("values must be non-empty")
        if self.trials_per_value < 1:
            raise ConfigError("trials_per_value must be >= 1")
        f_low, f_high = self.frequencies
        if not 0 < f_low < f_high:
            raise ConfigError("frequencies must satisfy 0 < f_low < f_high")
        if band_width(self.camera, f_low) > self.camera.height / 2:
            raise ConfigError(
                f"f_low={f_low} Hz gives bands wider than half the frame; they cannot be measured"
            )
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def pose_for(self, value: float) -> ScenePose:
        return replace(self.base_pose, **{self.variable: value})

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> SweepSpec:
        data = dict(data)
        try:
            kwargs: dict[str, Any] = {
                "variable": data.pop("variable"),
                "values": tuple(data.pop("values")),
            }
        except KeyError as exc:
            raise ConfigError(f"sweep spec is missing {exc}") from exc
        if "base_pose" in data:
            kwargs["base_pose"] = ScenePose.from_dict(data.pop("base_pose"))
        if "camera" in data:
            kwargs["camera"] = CameraModel.from_dict(data.pop("camera"))
        if "noise" in data:
            noise = data.pop("noise")
            if isinstance(noise, str):
                noise = load_json(base_dir / noise if base_dir is not None else noise)
            kwargs["noise"] = NoiseModel.from_dict(noise)
        if "detector" in data:
            kwargs["detector"] = DetectorConfig.from_dict(data.pop("detector"))
        if "frequencies" in data:
            kwargs["frequencies"] = tuple(data.pop("frequencies"))
        ref = data.pop("dictionary", "default")
        if ref not in (None, "default") and base_dir is not None and not Path(ref).is_absolute():
            ref = str(base_dir / ref)
        kwargs["dict_ref"] = ref
        known = {"trials_per_value", "marker_id", "duty", "glow", "seed", "description"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep spec keys: {sorted(unknown)}")
        kwargs.update(data)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad sweep spec: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> SweepSpec:
        path = Path(path)
        return cls.from_dict(load_json(path), base_dir=path.parent)


@dataclass
class ValueStats:
    value: float
    trials: int = 0
    successes: int = 0
    failures: dict[str, int] = field(default_factory=lambda: {s: 0 for s in FAILURE_STAGES})

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


@dataclass
class RecognitionStats:
    variable: str
    rows: list[ValueStats]

    def rates(self) -> list[float]:
        return [r.rate for r in self.rows]

    def rate_at(self, value: float) -> float:
        for r in self.rows:
            if abs(r.value - value) < 1e-9:
                return r.rate
        raise KeyError(value)


def trial_seed(seed: int, value_index: int, trial: int) -> np.random.SeedSequence:
    """Independent stream per trial, so scheduling cannot change results."""
    return np.random.SeedSequence([seed, value_index, trial])


def _run_one(spec: SweepSpec, dictionary: Dictionary, value_index: int, trial: int) -> str | None:
    """One render/detect trial; ``None`` on success, else the failure bucket."""
    rng = np.random.default_rng(trial_seed(spec.seed, value_index, trial))
    f_low, f_high = spec.frequencies
    t0 = float(rng.uniform(0.0, 1.0 / f_low))
    noise = spec.noise.with_seed(int(rng.integers(0, 2**63 - 1)))
    panel = assign_frequencies(encode(dictionary, spec.marker_id), f_low, f_high, spec.duty)
    pose = spec.pose_for(spec.values[value_index])
    frame = render_frame(spec.camera, pose, panel, t0, noise, spec.glow)
    try:
        result = detect(frame, dictionary, spec.detector)
    except RecognitionFailed as exc:
        return failure_stage(exc)
    return None if result.id == spec.marker_id else "decode"


def _run_chunk(args: tuple[SweepSpec, Dictionary, list[tuple[int, int]]]) -> list[tuple[int, int, str | None]]:
    spec, dictionary, jobs = args
    return [(vi, t, _run_one(spec, dictionary, vi, t)) for vi, t in jobs]


def run_sweep(spec: SweepSpec, workers: int = 1, dictionary: Dictionary | None = None) -> RecognitionStats:
    if dictionary is None:
        dictionary = resolve_dictionary(spec.dict_ref)
    encode(dictionary, spec.marker_id)  # fail fast on a bad id
    jobs = [(vi, t) for vi in range(len(spec.values)) for t in range(spec.trials_per_value)]
    if workers > 1:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = [o for part in pool.map(_run_chunk, [(spec, dictionary, c) for c in chunks]) for o in part]
    else:
        outcomes = _run_chunk((spec, dictionary, jobs))
    rows = [ValueStats(v) for v in spec.values]
    for vi, _, outcome in sorted(outcomes, key=lambda o: (o[0], o[1])):
        row = rows[vi]
        row.trials += 1
        if outcome is None:
            row.successes += 1
        else:
            row.failures[outcome] += 1
    return RecognitionStats(spec.variable, rows)


# --- reporting -------------------------------------------------------------


def stats_to_csv(stats: RecognitionStats) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in stats.rows:
        writer.writerow(
            [repr(r.value), r.trials, r.successes, repr(r.rate)] + [r.failures[s] for s in FAILURE_STAGES]
        )
    return buf.getvalue()


def stats_from_csv(text: str, variable: str = "value") -> RecognitionStats:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ConfigError(f"unexpected CSV header {reader.fieldnames}")
    rows = []
    for rec in reader:
        rows.append(
            ValueStats(
                float(rec["value"]),
                int(rec["trials"]),
                int(rec["successes"]),
                {s: int(rec[f"fail_{s}"]) for s in FAILURE_STAGES},
            )
        )
    return RecognitionStats(variable, rows)


def stats_to_svg(stats: RecognitionStats, width: int = 480, height: int = 320) -> str:
    """Rate-versus-value line chart; gridlines at every 0.25 of rate."""
    if not stats.rows:
        raise ConfigError("cannot plot empty stats")
    left, right, top, bottom = 60, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [r.value for r in stats.rows]
    lo, hi = min(xs), max(xs)
    span = hi - lo or 1.0

    def px(v: float) -> float:
        return left + (v - lo) / span * pw if len(xs) > 1 else left + pw / 2

    def py(rate: float) -> float:
        return top + (1.0 - rate) * ph

    unit = "m" if stats.variable == "distance" else "deg" if stats.variable == "yaw" else ""
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for k in range(5):
        rate = k / 4
        y = py(rate)
        out.append(f'<line class="grid" x1="{left}" y1="{y:g}" x2="{left + pw}" y2="{y:g}" stroke="#ccc"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:g}" text-anchor="end">{rate:g}</text>')
    for v in xs:
        out.append(f'<text x="{px(v):g}" y="{top + ph + 16}" text-anchor="middle">{v:g}</text>')
    out.append(
        f'<text x="{left + pw / 2:g}" y="{height - 10}" text-anchor="middle">{stats.variable} ({unit})</text>'
    )
    out.append(
        f'<text x="14" y="{top + ph / 2:g}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2:g})">recognition rate</text>'
    )
    pts = " ".join(f"{px(r.value):g},{py(r.rate):g}" for r in stats.rows)
    out.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_results(stats: RecognitionStats, path: str | Path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "csv":
        text = stats_to_csv(stats)
    elif fmt == "svg":
        text = stats_to_svg(stats)
    else:
        raise ConfigError(f"unsupported output format {fmt!r}")
    if not stats.rows:
        raise ConfigError("no rows to emit")
    path.write_text(text)
    return path


def summarize(stats: RecognitionStats) -> Iterable[str]:
    for r in stats.rows:
        fails = " ".join(f"{s}={r.failures[s]}" for s in FAILURE_STAGES)
        yield f"{stats.variable}={r.value:g}: {r.successes}/{r.trials} rate={r.rate:.3f} {fails}"
