"""The ``agent`` command line: run, harvest, validate, replay, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .gateway import (
    GatewayError,
    HttpCompletionGateway,
    RecordingProxy,
    ScriptedOracle,
)
from .harvester import HarvestConfig, SnapshotError, harvest, load_snapshot, parse_elements, serialize_elements
from .orchestrator import (
    COMPLETE,
    AgentConfig,
    DivergenceAt,
    WorldMismatch,
    load_transcript,
    replay,
    run_task,
)
from .protocol import ProtocolError, parse_output, validate_events
from .session import FixtureWorld, SimulatedSession, WorldError


def _add_run(subparsers) -> None:
    p = subparsers.add_parser("run", help="drive a task to completion")
    p.add_argument("--goal", required=True, help="task description for the model")
    p.add_argument("--fixture", help="fixture world JSON file (simulated mode)")
    p.add_argument("--oracle", help="scripted oracle JSON file (simulated mode)")
    p.add_argument("--url", help="start URL (live mode)")
    p.add_argument("--endpoint", help="completion endpoint (default: AGENT_LLM_ENDPOINT)")
    p.add_argument("--browser-ws-url", help="WebSocket endpoint of a debuggable browser")
    p.add_argument("--start", help="start page id (fixture) overriding the world default")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--transcript", help="write the JSONL transcript here")
    p.add_argument("--record", help="record prompt/response pairs as an oracle script")
    p.add_argument("--answer", action="append", default=[],
                   help="queued answer for clarifying questions (repeatable)")
    p.add_argument("--no-sanitize", action="store_true", help="keep quotes in prompts")
    p.add_argument("--harvest-config", help="JSON file overriding the interactable whitelist")
    p.add_argument("--quiet", action="store_true", help="suppress the event log")


def _add_harvest(subparsers) -> None:
    p = subparsers.add_parser("harvest", help="print the numbered element map for a page")
    p.add_argument("--fixture", help="PageSnapshot fixture JSON file")
    p.add_argument("--url", help="live page URL")
    p.add_argument("--browser-ws-url", help="WebSocket endpoint of a debuggable browser")
    p.add_argument("--harvest-config", help="JSON file overriding the interactable whitelist")


def _add_validate(subparsers) -> None:
    p = subparsers.add_parser("validate", help="check a model output against an element map")
    p.add_argument("--output", required=True, help="file holding raw model output text")
    p.add_argument("--elements", required=True, help="file holding the elements JSON")
    p.add_argument("--lenient", action="store_true", help="allow escape characters")


def _add_replay(subparsers) -> None:
    p = subparsers.add_parser("replay", help="re-run a transcript and verify it regenerates")
    p.add_argument("transcript", help="JSONL transcript file")
    p.add_argument("--fixture", required=True, help="the world the transcript was recorded on")


def _add_serve(subparsers) -> None:
    p = subparsers.add_parser("serve", help="start the control API")
    p.add_argument("--port", type=int, default=8722)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--browser-ws-url", help="enables live mode tasks")
    p.add_argument("--ui", help="directory of built copilot UI assets to serve at /")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agent", description=__doc__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_run(subparsers)
    _add_harvest(subparsers)
    _add_validate(subparsers)
    _add_replay(subparsers)
    _add_serve(subparsers)
    return parser


def _harvest_config(args) -> HarvestConfig | None:
    return HarvestConfig.from_file(args.harvest_config) if args.harvest_config else None


def _event_printer(quiet: bool):
    def emit(kind: str, payload: dict) -> None:
        if not quiet:
            print(f"[{kind}] {json.dumps(payload, ensure_ascii=False)}")

    return emit


def cmd_run(args) -> int:
    config = AgentConfig()
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    if args.no_sanitize:
        config.sanitize = False

    queued = list(args.answer)

    def answer_provider(questions: list[str]) -> list[str]:
        answers = []
        for question in questions:
            if queued:
                answers.append(queued.pop(0))
            else:
                answers.append(input(f"[question] {question}\n> "))
        return answers

    if args.fixture:
        if not args.oracle:
            print("fixture mode needs --oracle", file=sys.stderr)
            return 2
        world = FixtureWorld.load(args.fixture)
        session = SimulatedSession(world, harvest_config=_harvest_config(args))
        gateway = ScriptedOracle.from_file(args.oracle)
        start = args.start or world.start
        world_digest = world.digest()
        mode = "fixture"
    elif args.url:
        from .devtools import LiveSession

        if not args.browser_ws_url:
            print("live mode needs --browser-ws-url", file=sys.stderr)
            return 2
        session = LiveSession(args.browser_ws_url, harvest_config=_harvest_config(args))
        gateway = HttpCompletionGateway(endpoint=args.endpoint)
        start = args.url
        world_digest = None
        mode = "live"
    else:
        print("need --fixture WORLD --oracle SCRIPT or --url U", file=sys.stderr)
        return 2

    if args.record:
        gateway = RecordingProxy(gateway, args.record)

    transcript = run_task(
        args.goal,
        start,
        session,
        gateway,
        config,
        mode=mode,
        world_digest=world_digest,
        transcript_path=args.transcript,
        emit=_event_printer(args.quiet),
        answer_provider=answer_provider,
    )
    print(f"final status: {transcript.final_status} after {len(transcript.steps)} step(s)")
    return 0 if transcript.final_status == COMPLETE else 1


def cmd_harvest(args) -> int:
    if args.fixture:
        snapshot = load_snapshot(args.fixture)
    elif args.url:
        from .devtools import LiveSession

        if not args.browser_ws_url:
            print("live harvest needs --browser-ws-url", file=sys.stderr)
            return 2
        session = LiveSession(args.browser_ws_url, harvest_config=_harvest_config(args))
        session.navigate(args.url)
        snapshot = session.snapshot()
        session.close()
    else:
        print("need --fixture F or --url U", file=sys.stderr)
        return 2
    print(serialize_elements(harvest(snapshot, _harvest_config(args))))
    return 0


def cmd_validate(args) -> int:
    raw = Path(args.output).read_text()
    elements = parse_elements(Path(args.elements).read_text())
    try:
        output = parse_output(raw, strict=not args.lenient)
    except ProtocolError as exc:
        print(f"parse error: {type(exc).__name__}: {exc}")
        return 2
    report = validate_events(output.event_list, elements)
    if report.ok:
        print(f"ok: {len(output.event_list)} event(s) pass the movement rules")
        return 0
    for violation in report.violations:
        print(f"violation at event {violation.event_index} [{violation.rule_id}]: {violation.message}")
    return 1


def cmd_replay(args) -> int:
    transcript = load_transcript(args.transcript)
    world = FixtureWorld.load(args.fixture)
    try:
        regenerated = replay(transcript, world)
    except WorldMismatch as exc:
        print(f"world mismatch: {exc}")
        return 2
    except DivergenceAt as exc:
        print(f"divergence: {exc}")
        return 1
    print(f"replay ok: {len(regenerated.steps)} step(s), final status {regenerated.final_status}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(browser_ws_url=args.browser_ws_url, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    commands = {
        "run": cmd_run,
        "harvest": cmd_harvest,
        "validate": cmd_validate,
        "replay": cmd_replay,
        "serve": cmd_serve,
    }
    try:
        return commands[args.command](args)
    except (WorldError, SnapshotError, GatewayError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
