"""Command line entry point: ``secure-replay <command> ...``.

Exit codes: 0 success, 1 tool error (parse, compile, replay, validation,
connection), 2 usage error.
"""

import argparse
import json
from pathlib import Path
import sys
import time

from .backend import get_backend
from .client import LocalSession, replay_log, replay_trace
from .compiler import DEFAULT_MARKING_BOUND, compile_net, deserialize, serialize
from .errors import ConformanceError
from .log_io import read_log
from .net import parse_pnml
from .oracle import validate_engine
from .protocol import connect, serve

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


def _load_net(path):
    return parse_pnml(Path(path).read_text(encoding="utf-8"))


def _load_artifact(path):
    return deserialize(Path(path).read_text(encoding="utf-8"))


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_compile(args):
    compiled = compile_net(_load_net(args.pnml), marking_bound=args.bound, prune=not args.no_prune)
    _write(args.output, serialize(compiled))
    print(f"places={compiled.n_places} visible={compiled.n_visible} "
          f"transitions={len(compiled.transitions)} scenarios={compiled.n_scenarios} "
          f"enablement={compiled.enablement.shape[0]}x{compiled.enablement.shape[1]} "
          f"sequences={compiled.sequences.shape[0]}x{compiled.sequences.shape[1]}",
          file=sys.stderr if args.output in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_serve(args):
    get_backend(args.backend)
    server = serve(_load_artifact(args.artifact), args.backend, args.listen)
    print(f"serving {args.backend} replay on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_replay(args):
    log = read_log(args.log)
    if args.local:
        if not args.artifact:
            raise _Usage("--local requires --artifact")
        compiled = _load_artifact(args.artifact)
        result = replay_log(log, lambda: LocalSession(compiled, args.backend, seed=args.seed),
                            workers=args.workers)
    else:
        with connect(args.connect, mode=args.backend, seed=args.seed) as session:
            result = replay_log(log, session)
    _write(args.out, result.render(args.format))
    bad = sum(1 for v in result.variants if v.error)
    print(f"variants={len(result.variants)} cases={log.n_cases} fitness={result.fitness:.6f}"
          + (f" failed={bad}" if bad else ""),
          file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_validate(args):
    net = _load_net(args.pnml)
    full = validate_engine(net, compile_net(net, marking_bound=args.bound, prune=False),
                           bound=args.net_bound, domain="reachable")
    deployed = validate_engine(net, compile_net(net, marking_bound=args.bound),
                               bound=args.net_bound, domain="observable")
    for label, rep in (("full artifact, reachable markings", full),
                       ("pruned artifact, observable markings", deployed)):
        print(f"{label}: {rep.passed}/{rep.cases} cases pass "
              f"({rep.markings} markings x {rep.transitions} transitions)")
        for mm in rep.mismatches:
            print(f"  mismatch: {json.dumps(mm)}")
    if args.json:
        _write(args.json, json.dumps({"full": full.to_dict(), "pruned": deployed.to_dict()},
                                     indent=2) + "\n")
    return EXIT_OK if full.ok and deployed.ok else EXIT_ERROR


def _diff(before, after):
    ops = {k: after["ops"].get(k, 0) - before["ops"].get(k, 0) for k in after["ops"]}
    tags = {k: v - before["macs_by_tag"].get(k, 0) for k, v in after["macs_by_tag"].items()}
    return {"ops": {k: v for k, v in ops.items() if v}, "total_ops": after["total_ops"] - before["total_ops"],
            "macs": after["macs"] - before["macs"], "macs_by_tag": {k: v for k, v in tags.items() if v}}


def run_bench(compiled, log, backends, seed=0):
    """Replay every variant under each backend; wall time, fit flag and op counts per trace."""
    rows = []
    for name in backends:
        session = LocalSession(compiled, name, seed=seed)
        for variant in log.variants:
            before = session.account.snapshot()
            t0 = time.perf_counter()
            report = replay_trace(variant, session)
            elapsed = time.perf_counter() - t0
            ops = _diff(before, session.account.snapshot())
            steps = len(variant)
            rows.append({"backend": name, "trace": "".join(variant) if all(len(a) == 1 for a in variant)
                         else ";".join(variant), "events": steps, "seconds": elapsed,
                         "fitness": report.fitness, "fitting": report.fits,
                         "total_ops": ops["total_ops"], "macs": ops["macs"],
                         "selector_macs_per_step": ops["macs_by_tag"].get("selector", 0) // steps})
    return rows


def cmd_bench(args):
    compiled = _load_artifact(args.artifact)
    log = read_log(args.log)
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    for b in backends:
        get_backend(b)
    rows = run_bench(compiled, log, backends, seed=args.seed)
    if args.json:
        _write(args.json, json.dumps(rows, indent=2) + "\n")
    header = f"{'backend':8} {'trace':16} {'ev':>3} {'ms':>9} {'fitness':>8} {'fit':>4} {'ops':>6} {'MACs':>7} {'sel/step':>8}"
    print(header)
    for r in rows:
        print(f"{r['backend']:8} {r['trace'][:16]:16} {r['events']:>3} {r['seconds'] * 1e3:>9.3f} "
              f"{r['fitness']:>8.4f} {'yes' if r['fitting'] else 'NO':>4} {r['total_ops']:>6} "
              f"{r['macs']:>7} {r['selector_macs_per_step']:>8}")
    for b in backends:
        sub = [r for r in rows if r["backend"] == b]
        unfit = sum(1 for r in sub if not r["fitting"])
        print(f"{b}: {len(sub)} traces, {unfit} unfitting, {sum(r['seconds'] for r in sub) * 1e3:.3f} ms total")
    return EXIT_OK


class _Usage(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(prog="secure-replay",
                                description="Privacy-preserving token-based replay conformance checking.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a PNML net into a replay artifact")
    c.add_argument("pnml")
    c.add_argument("-o", "--output", default="-")
    c.add_argument("--bound", type=int, default=DEFAULT_MARKING_BOUND, help="marking bound the artifact is rated for")
    c.add_argument("--no-prune", action="store_true", help="keep scenarios that cannot occur between visible steps")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("serve", help="run the model-owner server")
    s.add_argument("--artifact", required=True)
    s.add_argument("--backend", default="clear")
    s.add_argument("--listen", default="127.0.0.1:7707")
    s.set_defaults(func=cmd_serve)

    r = sub.add_parser("replay", help="replay an event log locally or against a server")
    r.add_argument("--log", required=True)
    where = r.add_mutually_exclusive_group(required=True)
    where.add_argument("--local", action="store_true")
    where.add_argument("--connect", metavar="HOST:PORT")
    r.add_argument("--artifact")
    r.add_argument("--backend", default="clear", help="backend (local) or mode (remote)")
    r.add_argument("--out", default="-")
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_replay)

    v = sub.add_parser("validate", help="check the engine against the token game exhaustively")
    v.add_argument("pnml")
    v.add_argument("--bound", type=int, default=DEFAULT_MARKING_BOUND)
    v.add_argument("--net-bound", type=int, default=1, help="per-place bound for the reachability sweep")
    v.add_argument("--json", help="write the validation report here")
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="time a log under several backends")
    b.add_argument("--artifact", required=True)
    b.add_argument("--log", required=True)
    b.add_argument("--backends", default="clear,mock")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--json", help="write per-trace rows here")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        parser.error(str(exc))
    except (ConformanceError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
