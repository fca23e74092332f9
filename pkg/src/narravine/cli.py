"""Command-line entry point.

    narravine run        interactive session behind the console gateway
    narravine replay     scripted, headless session from a scene file
    narravine analyze    metrics + questionnaire reports for a session dir
    narravine validate-config

Exit codes: 0 success, 2 configuration problem, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from . import questionnaires
from .config import ConfigError, SessionConfig
from .gateway import Gateway
from .runner import ModuleBootFailure, run_session
from .store import EmptyInput, IoFailure, compute_metrics, load_session_records

log = logging.getLogger(__name__)

REPLAY_CLOCK_SCALE = 0.02  # 50x real time: a full 3-trial script in seconds


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON session config")
    parser.add_argument("--trials", type=int, metavar="N", help="number of stories")
    parser.add_argument("--mock-genai", metavar="FIXTURE",
                        help="use the mock transport with this fixture file")
    parser.add_argument("--port-base", type=int, metavar="N",
                        help="base TCP port for middleware port allocation")
    parser.add_argument("--seed", type=int, metavar="N", help="session seed")
    parser.add_argument("--out", metavar="DIR", help="session output directory")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narravine",
                                     description="storytelling session supervisor")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="serve the console gateway and run live")
    _add_common(p_run)
    p_run.add_argument("--listen", default="127.0.0.1:8765", metavar="HOST:PORT")
    p_run.add_argument("--scene", metavar="PATH",
                       help="drive the session from a scene script instead of console input")
    p_run.add_argument("--no-autostart", action="store_true",
                       help="wait for POST /api/session/start instead of starting now")
    p_run.add_argument("--assets", metavar="DIR", help="sticker image directory")
    p_run.add_argument("--console", metavar="DIR",
                       help="serve the operator console bundle from this directory")

    p_replay = sub.add_parser("replay", help="run a scripted scene headless")
    p_replay.add_argument("scene", metavar="SCENE", help="scene script path")
    _add_common(p_replay)
    p_replay.add_argument("--scale", type=float, default=None,
                          help="clock scale (default %g)" % REPLAY_CLOCK_SCALE)
    p_replay.add_argument("--watchdog", type=float, default=120.0,
                          help="hard wall-clock limit in seconds")

    p_analyze = sub.add_parser("analyze", help="report metrics for a session directory")
    p_analyze.add_argument("session_dir", metavar="DIR")
    p_analyze.add_argument("--sus", metavar="CSV", help="SUS responses")
    p_analyze.add_argument("--ueq", metavar="CSV", help="UEQ responses")
    p_analyze.add_argument("--votes", metavar="CSV", help="categorical votes")

    p_validate = sub.add_parser("validate-config", help="check a config file")
    p_validate.add_argument("--config", metavar="PATH", required=True)

    return parser


def _load_config(args: argparse.Namespace, *, scene: Optional[str] = None) -> SessionConfig:
    config = SessionConfig.from_file(args.config) if args.config else SessionConfig()
    overrides: dict = {}
    if scene is not None:
        overrides["scene_path"] = scene
    if getattr(args, "trials", None) is not None:
        overrides["trials_total"] = args.trials
    if getattr(args, "mock_genai", None) is not None:
        overrides["genai_transport"] = "mock"
        overrides["genai_fixture_path"] = args.mock_genai
    if getattr(args, "port_base", None) is not None:
        overrides["port_base"] = args.port_base
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["session_dir"] = args.out
    if overrides:
        config = config.with_overrides(overrides)
    return config


def _print(data: dict) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def cmd_replay(args: argparse.Namespace) -> int:
    config = _load_config(args, scene=args.scene)
    if args.scale is not None:
        config = config.with_overrides({"clock_scale": args.scale})
    elif config.clock_scale == 1.0:
        config = config.with_overrides({"clock_scale": REPLAY_CLOCK_SCALE})
    config.validate()
    records = run_session(config, watchdog_s=args.watchdog)
    if not records:
        print("no trials completed", file=sys.stderr)
        return 1
    metrics = compute_metrics(records)
    _print(
        {
            "trials": [
                {
                    "trial_index": r.trial_index,
                    "outcome": r.outcome,
                    "failure_kind": r.failure_kind,
                    "cubes": list(r.cube_sequence),
                }
                for r in records
            ],
            "metrics": metrics.to_dict(),
        }
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args, scene=args.scene)
    config.validate()
    host, _, port = args.listen.rpartition(":")
    gateway = Gateway(config, host=host or "127.0.0.1", port=int(port),
                      assets_dir=args.assets, console_dir=args.console)
    host, port = gateway.start()
    # Flushed eagerly so wrappers watching a pipe see the address at once.
    print("gateway listening on http://%s:%d" % (host, port), flush=True)
    try:
        if args.no_autostart:
            # Serve until interrupted so remote operators can start and
            # finish any number of sessions.
            threading.Event().wait()
        else:
            gateway.start_session()
            gateway.join_session()
    except KeyboardInterrupt:
        print("interrupted, aborting session", file=sys.stderr)
    finally:
        gateway.stop()
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    records = load_session_records(args.session_dir)
    report: dict = {}
    if records:
        report["metrics"] = compute_metrics(records).to_dict()
        report["trials"] = [
            {"trial_index": r.trial_index, "outcome": r.outcome,
             "failure_kind": r.failure_kind}
            for r in records
        ]
    base = Path(args.session_dir)
    sus_path = Path(args.sus) if args.sus else base / "sus.csv"
    ueq_path = Path(args.ueq) if args.ueq else base / "ueq.csv"
    votes_path = Path(args.votes) if args.votes else base / "votes.csv"
    q = questionnaires.questionnaire_report(
        sus=questionnaires.load_sus_csv(sus_path) if sus_path.is_file() else None,
        ueq=questionnaires.load_ueq_csv(ueq_path) if ueq_path.is_file() else None,
        votes=questionnaires.load_votes_csv(votes_path) if votes_path.is_file() else None,
    )
    if q:
        report["questionnaires"] = q
    if not report:
        print("nothing to analyze in %s" % args.session_dir, file=sys.stderr)
        return 1
    _print(report)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = SessionConfig.from_file(args.config)
    config.validate()
    print("config ok: %s" % args.config)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "analyze":
            return cmd_analyze(args)
        if args.command == "validate-config":
            return cmd_validate(args)
        raise AssertionError("unreachable")
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (ModuleBootFailure, IoFailure, EmptyInput, questionnaires.EmptyInput) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
