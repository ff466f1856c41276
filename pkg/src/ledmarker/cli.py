"""Command-line front end.

Exit status: 0 on success, 1 when ``detect``/``localize`` cannot recognize a
marker, 2 on bad usage or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

import numpy as np

from ledmarker.codec import assign_frequencies, encode, generate_dictionary
from ledmarker.detector import DetectorConfig, detect
from ledmarker.errors import LedMarkerError, RecognitionFailed
from ledmarker.harness import SweepSpec, emit_results, resolve_dictionary, run_sweep, summarize
from ledmarker.optics import DEFAULT_GLOW, CameraModel, Frame, NoiseModel, ScenePose, load_json, render_frame
from ledmarker.pose import MarkerMap, estimate_pose, localize


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _camera(path: str | None) -> CameraModel:
    return CameraModel.from_dict(load_json(path)) if path else CameraModel()


def _detector(path: str | None) -> DetectorConfig:
    return DetectorConfig.from_dict(load_json(path)) if path else DetectorConfig()


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2))


def cmd_dict_generate(args) -> int:
    d = generate_dictionary(args.grid_size, args.count, args.min_hamming, args.seed, args.max_attempts)
    if args.out:
        d.save(args.out)
    else:
        _print_json(d.to_dict())
    return 0


def _grid_text(bits: np.ndarray) -> str:
    return "\n".join("".join("#" if b else "." for b in row) for row in bits)


def cmd_dict_show(args) -> int:
    d = resolve_dictionary(args.dict)
    print(f"grid_size={d.grid_size} min_hamming={d.min_hamming} entries={len(d)} seed={d.seed}")
    ids = [args.id] if args.id is not None else range(len(d))
    for i in ids:
        p = encode(d, i)
        print(f"\nid {i}: {p.to_string()}")
        print(_grid_text(p.bits))
    return 0


def cmd_encode(args) -> int:
    d = resolve_dictionary(args.dict)
    p = encode(d, args.id)
    panel = assign_frequencies(p, args.f_low, args.f_high, args.duty)
    _print_json(
        {
            "id": args.id,
            "pattern": p.to_string(),
            "frequencies": [[w.frequency for w in row] for row in panel.cell_waves],
            "duty": args.duty,
        }
    )
    return 0


def cmd_render(args) -> int:
    d = resolve_dictionary(args.dict)
    camera = _camera(args.camera)
    if args.pose:
        pose = ScenePose.from_dict(load_json(args.pose))
    else:
        pose = ScenePose(args.distance, args.yaw, args.marker_side, args.roll)
    noise = NoiseModel.from_dict(load_json(args.noise)) if args.noise else NoiseModel()
    rng = np.random.default_rng(args.seed)
    t0 = args.t0 if args.t0 is not None else float(rng.uniform(0.0, 1.0 / args.f_low))
    noise = noise.with_seed(args.seed)
    panel = assign_frequencies(encode(d, args.id), args.f_low, args.f_high, args.duty)
    frame = render_frame(camera, pose, panel, t0, noise, args.glow)
    frame.save(args.out)
    print(f"wrote {args.out} (id {args.id}, t0={t0!r})")
    return 0


def _detect_json(args, camera: CameraModel, marker_side: float) -> tuple[dict[str, Any], Any, Any]:
    d = resolve_dictionary(args.dict)
    frame = Frame.load(args.frame)
    result = detect(frame, d, _detector(args.config), getattr(args, "debug_dir", None))
    pose = estimate_pose(result, camera, marker_side)
    out = {
        "id": result.id,
        "rotation": result.rotation,
        "polarity_inverted": result.polarity_inverted,
        "pattern": result.pattern.to_string(),
        "corners": result.marker_corners().tolist(),
        "pose": pose.to_dict(),
    }
    return out, result, pose


def cmd_detect(args) -> int:
    out, _, _ = _detect_json(args, _camera(args.camera), args.marker_side)
    _print_json(out)
    return 0


def cmd_localize(args) -> int:
    marker_map = MarkerMap.load(args.map)
    camera = _camera(args.camera)
    d = resolve_dictionary(args.dict)
    result = detect(Frame.load(args.frame), d, _detector(args.config))
    entry = marker_map[result.id]
    pose = estimate_pose(result, camera, entry.marker_side)
    position = localize(result, pose, marker_map)
    _print_json({"id": result.id, "camera_position": position.tolist(), "pose": pose.to_dict()})
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec.load(args.spec)
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials_per_value"] = args.trials
    if overrides:
        spec = SweepSpec(**{**spec.__dict__, **overrides})
    stats = run_sweep(spec, workers=args.workers)
    for line in summarize(stats):
        print(line)
    for path in args.out:
        emit_results(stats, path)
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ledmarker", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    dict_p = sub.add_parser("dict", help="generate or inspect marker dictionaries")
    dict_sub = dict_p.add_subparsers(dest="dict_command", required=True, parser_class=_Parser)
    g = dict_sub.add_parser("generate", help="rejection-sample a rotation-aware dictionary")
    g.add_argument("--grid-size", type=int, default=4)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--min-hamming", type=int, default=4)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--max-attempts", type=int, default=50_000)
    g.add_argument("--out", help="write JSON here instead of stdout")
    g.set_defaults(func=cmd_dict_generate)
    s = dict_sub.add_parser("show", help="print dictionary entries as grids")
    s.add_argument("--dict", default="default")
    s.add_argument("--id", type=int)
    s.set_defaults(func=cmd_dict_show)

    def add_waves(q):
        q.add_argument("--f-low", type=float, default=500.0)
        q.add_argument("--f-high", type=float, default=2000.0)
        q.add_argument("--duty", type=float, default=0.5)

    e = sub.add_parser("encode", help="show the pattern and blink frequencies for an id")
    e.add_argument("--dict", default="default")
    e.add_argument("--id", type=int, required=True)
    add_waves(e)
    e.set_defaults(func=cmd_encode)

    r = sub.add_parser("render", help="render one rolling-shutter frame to PGM")
    r.add_argument("--dict", default="default")
    r.add_argument("--id", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--camera", help="CameraModel JSON")
    r.add_argument("--pose", help="ScenePose JSON (overrides the pose flags)")
    r.add_argument("--distance", type=float, default=0.6)
    r.add_argument("--yaw", type=float, default=0.0)
    r.add_argument("--roll", type=float, default=0.0)
    r.add_argument("--marker-side", type=float, default=0.16)
    r.add_argument("--noise", help="NoiseModel JSON")
    r.add_argument("--glow", type=float, default=DEFAULT_GLOW)
    r.add_argument("--t0", type=float, help="exposure start; drawn from --seed when omitted")
    r.add_argument("--seed", type=int, default=0)
    add_waves(r)
    r.set_defaults(func=cmd_render)

    def add_detect(q):
        q.add_argument("--frame", required=True)
        q.add_argument("--dict", default="default")
        q.add_argument("--config", help="DetectorConfig JSON")
        q.add_argument("--camera", help="CameraModel JSON")

    dt = sub.add_parser("detect", help="decode a marker from a PGM frame")
    add_detect(dt)
    dt.add_argument("--marker-side", type=float, default=0.16)
    dt.add_argument("--debug-dir", help="dump per-stage PGM images here")
    dt.set_defaults(func=cmd_detect)

    lo = sub.add_parser("localize", help="camera world position from a frame and a marker map")
    add_detect(lo)
    lo.add_argument("--map", required=True, help="MarkerMap JSON")
    lo.set_defaults(func=cmd_localize)

    sw = sub.add_parser("sweep", help="Monte-Carlo recognition sweep")
    sw.add_argument("--spec", required=True, help="SweepSpec JSON")
    sw.add_argument("--out", action="append", default=[], help="CSV or SVG path; repeatable")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--seed", type=int, help="override the spec seed")
    sw.add_argument("--trials", type=int, help="override trials_per_value")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RecognitionFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LedMarkerError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
