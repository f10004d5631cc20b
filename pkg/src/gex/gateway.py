"""Command-line entry points: workspace sampling, offline retargeting,
frame decoding, the live service, and headless gesture replay."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import default_config, load_config
from .errors import ConfigError, GexError, ProtocolError
from .gestures import read_gesture_file, targets_by_tick
from .kinematics import HandModel, builtin_model, load_model_file
from .protocol import Instruction, InstructionPacket, StreamDecoder, format_hex, parse_hex
from .retarget import RetargetConfig, retarget_trajectory
from .rig import build_rig
from .teleop import FingerMode, TeleopSession

log = logging.getLogger("gex")


def _load_model_ref(ref: str) -> HandModel:
    if ref.startswith("builtin:"):
        return builtin_model(ref.split(":", 1)[1])
    return load_model_file(ref)


def _tip_distance(model: HandModel, q: np.ndarray, a: str = "thumb", b: str = "index") -> float:
    return float(
        np.linalg.norm(
            model.fingertip(a, q[model.slices[a]]) - model.fingertip(b, q[model.slices[b]])
        )
    )


# ------------------------------------------------------------------ commands


def cmd_workspace(args) -> int:
    model = _load_model_ref(args.model)
    cloud = model.sample_workspace(args.finger, args.n, args.seed)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for x, y, z in cloud:
            fh.write(f"{x:.9g},{y:.9g},{z:.9g}\n")
    volume = 0.0
    if len(cloud) >= 4:
        try:
            from scipy.spatial import ConvexHull

            volume = float(ConvexHull(cloud).volume)
        except Exception:
            volume = 0.0  # degenerate cloud
    print(f"wrote {len(cloud)} points to {out}; convex hull volume {volume:.6g} m^3")
    return 0


def cmd_retarget(args) -> int:
    glove = _load_model_ref(args.glove)
    hand = _load_model_ref(args.hand)
    records = read_gesture_file(args.gesture, glove.n_joints)
    frames = [np.radians(q) for _, q in records]
    out_frames = retarget_trajectory(glove, hand, frames, RetargetConfig())
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for (t, _), q_hand in zip(records, out_frames):
            fh.write(json.dumps({"t": t, "q_hand": np.degrees(q_hand).tolist()}) + "\n")
    glove_mm = 1000.0 * _tip_distance(glove, frames[-1])
    hand_mm = 1000.0 * _tip_distance(hand, out_frames[-1])
    print(
        f"retargeted {len(out_frames)} frames; final thumb-index distance: "
        f"glove {glove_mm:.2f} mm -> hand {hand_mm:.2f} mm"
    )
    return 0


def cmd_decode(args) -> int:
    if args.file:
        text = Path(args.file).read_text(encoding="utf-8")
    elif args.hex:
        text = " ".join(args.hex)
    else:
        text = sys.stdin.read()
    if not text.strip():
        return 0
    data = parse_hex(text)
    dec = StreamDecoder()
    for pkt in dec.feed(data):
        if isinstance(pkt, InstructionPacket):
            name = Instruction(pkt.instruction).name
            print(f"{name} id={pkt.id} crc=ok params=[{format_hex(pkt.params)}]")
        else:
            print(
                f"STATUS id={pkt.id} error=0x{pkt.error:02X} crc=ok "
                f"params=[{format_hex(pkt.params)}]"
            )
    bad = dec.resync_count
    leftover = dec.pending_bytes()
    if bad:
        print(f"{bad} malformed frame(s) discarded", file=sys.stderr)
    if leftover:
        print(f"{leftover} trailing byte(s) not part of any frame", file=sys.stderr)
    return 1 if bad else 0


def cmd_serve(args) -> int:
    from .service import run_serve

    config = load_config(args.config) if args.config else default_config()
    run_serve(config, host=args.host, port=args.port, ui_dir=args.ui)
    return 0


def cmd_replay(args) -> int:
    config = load_config(args.config) if args.config else default_config()
    records = read_gesture_file(args.gesture, config.glove_model.n_joints)
    rig = build_rig(
        hand_model=config.hand_model,
        glove_model=config.glove_model,
        hand_profile=config.hand_profile,
        glove_profile=config.glove_profile,
    )
    session = TeleopSession.bringup(
        rig=rig,
        scene=config.scene,
        retarget_config=config.retarget,
        detector=config.detector,
        impedance=config.impedance,
        rate_hz=config.rate_hz,
        substeps=config.substeps,
    )
    home = np.array([j.home_deg for j in config.glove_model.joints])
    targets = targets_by_tick(records, session.dt, home)

    reports = []
    out_path = Path(args.out)
    with out_path.open("w", encoding="utf-8") as fh:
        for target in targets:
            session.set_glove_target(target)
            report = session.tick()
            reports.append(report)
            fh.write(json.dumps(report.to_dict()) + "\n")
    rig.close()

    fingers = [f.name for f in config.hand_model.fingers]
    trailing = {}
    total_contact = {}
    for name in fingers:
        run = 0
        for r in reversed(reports):
            if r.contact_flags[name]:
                run += 1
            else:
                break
        trailing[name] = round(run * session.dt, 4)
        total_contact[name] = sum(r.contact_flags[name] for r in reports)
    timeline = []
    prev = {name: FingerMode.FREE for name in fingers}
    for r in reports:
        for name in fingers:
            if r.modes[name] is not prev[name]:
                timeline.append({"t": r.timestamp, "finger": name, "mode": r.modes[name].value})
                prev[name] = r.modes[name]
    final = reports[-1]
    summary = {
        "ticks": len(reports),
        "duration_s": round(len(reports) * session.dt, 4),
        "engaged_final": [n for n in fingers if final.modes[n] is FingerMode.ENGAGED],
        "contact_ticks": total_contact,
        "contact_trailing_s": trailing,
        "max_feedback_torque": float(np.max(np.abs([r.feedback_torques for r in reports]))),
        "mode_timeline": timeline,
    }
    summary_path = out_path.with_suffix(out_path.suffix + ".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gex",
        description="Virtual dexterous-hand teleoperation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("workspace", help="sample a fingertip workspace cloud to CSV")
    p.add_argument("--model", default="builtin:gx11", help="model path or builtin:<name>")
    p.add_argument("--finger", default="index")
    p.add_argument("-n", type=int, default=100_000, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_workspace)

    p = sub.add_parser("retarget", help="retarget a recorded gesture offline")
    p.add_argument("--glove", default="builtin:ex12")
    p.add_argument("--hand", default="builtin:gx11")
    p.add_argument("--gesture", required=True, help="input gesture JSONL")
    p.add_argument("--out", required=True, help="output hand trajectory JSONL")
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("decode", help="decode hex servo-bus frames")
    p.add_argument("hex", nargs="*", help="hex bytes (pairs, spaces optional)")
    p.add_argument("--file", help="read hex text from a file")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("serve", help="run the live teleoperation service")
    p.add_argument("--config", help="gateway config YAML (default: packaged)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="override config port")
    p.add_argument("--ui", default=None, help="static directory for the operator console")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="headless gesture replay against the scene")
    p.add_argument("--config", help="gateway config YAML (default: packaged)")
    p.add_argument("--gesture", required=True)
    p.add_argument("--out", required=True, help="per-tick report JSONL")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GEX_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProtocolError, GexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
