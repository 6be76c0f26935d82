"""Command-line front end: run scenarios, manage a key store, replay demos."""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from eeks import directory as kd
from eeks.errors import EeksError, ScriptInvalid
from eeks.sim import run_scenario
from eeks.verdicts import evaluate, format_json, format_table

DEMOS = {
    "pfs": "pfs_demo.json",
    "strip": "strip_opportunistic.json",
    "revocation": "revocation.json",
    "fallback": "fallback_enforced.json",
}

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def scenario_dir() -> Path:
    override = os.environ.get("EEKS_SCENARIO_DIR")
    if override:
        return Path(override)
    return Path(str(resources.files("eeks") / "scenarios"))


def cmd_run(path, seed=None, out=".", as_json=False, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    path = Path(path)
    try:
        script = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: {path}: line {exc.lineno} column {exc.colno}: {exc.msg}", file=stderr)
        return EXIT_USAGE
    try:
        result = run_scenario(script, seed)
        verdicts = evaluate(result, script.get("expect", {}))
    except (ScriptInvalid, KeyError) as exc:
        print(f"error: {path}: {exc}", file=stderr)
        return EXIT_USAGE

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    transcript_path = out / f"{path.stem}.transcript.jsonl"
    transcript_path.write_text(result.transcript.to_jsonl(), encoding="utf-8")

    if as_json:
        stdout.write(format_json(result.name, result.seed, verdicts))
    else:
        stdout.write(format_table(result.name, result.seed, verdicts))
        stdout.write(f"transcript: {transcript_path} ({len(result.transcript)} events)\n")
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


def cmd_keys(action, store, identity=None, key=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    node = kd.DirectoryNode("root", Path(store).name)
    if Path(store).exists():
        try:
            node.load(store)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=stderr)
            return EXIT_USAGE
    now = max((rec.updated_at for rec in node.records()), default=0) + 1

    if action in ("publish", "revoke") and not identity:
        print(f"error: {action} needs --id", file=stderr)
        return EXIT_USAGE
    try:
        if action == "publish":
            if not key:
                print("error: publish needs --key", file=stderr)
                return EXIT_USAGE
            try:
                public = int(key, 16)
            except ValueError:
                print(f"error: --key {key!r} is not hex", file=stderr)
                return EXIT_USAGE
            kd.publish(node, identity, public, now)
        elif action == "revoke":
            kd.revoke(node, identity, now)
    except kd.NotFound:
        print(f"error: {identity}: not found", file=stderr)
        return EXIT_FAIL
    except EeksError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_FAIL
    if action != "list":
        node.save(store)

    rows = node.records()
    width = max([len(r.identity) for r in rows] + [8])
    stdout.write(f"{'identity':<{width}}  {'status':<8} {'version':>7} {'updated':>7}  key\n")
    for r in rows:
        key_hex = f"{r.public_key:x}"
        short = key_hex if len(key_hex) <= 16 else key_hex[:16] + "..."
        stdout.write(f"{r.identity:<{width}}  {r.status:<8} {r.version:>7} {r.updated_at:>7}  {short}\n")
    return EXIT_OK


def cmd_demo(name, out="eeks-out", as_json=False, stdout=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    if name not in DEMOS:
        print(f"error: unknown demo {name!r}; available: {', '.join(DEMOS)}", file=stderr)
        return EXIT_USAGE
    return cmd_run(scenario_dir() / DEMOS[name], out=out, as_json=as_json,
                   stdout=stdout, stderr=stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eeks-lab",
                                     description="EEKS secure-mail protocol laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario script")
    run.add_argument("script")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default=".", help="directory for the transcript file")
    run.add_argument("--json", action="store_true", help="print verdicts as JSON")

    keys = sub.add_parser("keys", help="manage a key-store snapshot")
    keys.add_argument("action", choices=["publish", "revoke", "list"])
    keys.add_argument("--store", required=True)
    keys.add_argument("--id", dest="identity")
    keys.add_argument("--key", help="public key as hex")

    demo = sub.add_parser("demo", help="run a bundled scenario")
    demo.add_argument("name", help=", ".join(DEMOS))
    demo.add_argument("--out", default="eeks-out")
    demo.add_argument("--json", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.script, args.seed, args.out, args.json)
    if args.command == "keys":
        return cmd_keys(args.action, args.store, args.identity, args.key)
    return cmd_demo(args.name, args.out, args.json)


if __name__ == "__main__":
    sys.exit(main())
