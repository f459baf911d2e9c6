"""Command-line front end: ``flowmine <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data or parse error, 4 training
divergence, 5 search budget exceeded.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .causality import CausalityGraph, build_graph, reachable_subgraph, to_dot
from .core import (PREDICATES, parse_catalog, parse_flows, parse_traces, write_catalog,
                   write_flows, write_traces)
from .errors import BudgetExceeded, FlowmineError
from .evaluator import DEFAULT_BUDGET, compare_flows, evaluate_greedy, evaluate_oracle, merge_reports
from .scenarios import SCENARIOS, scenario

log = logging.getLogger("flowmine")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_BUDGET = 0, 2, 3, 4, 5
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifests and key=value files


def _digest(path: Path) -> dict[str, str]:
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    return {str(p): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def write_manifest(directory, subcommand, config, inputs, seed, runtime):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digests = {}
    for p in inputs:
        if p is not None and Path(p).exists():
            digests.update(_digest(Path(p)))
    manifest = {
        "version": __version__,
        "subcommand": subcommand,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(config.items())
                   if k not in ("func", "command")},
        "inputs": digests,
        "seed": seed,
        "runtime_seconds": round(runtime, 6),
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def dumps_kv(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def loads_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FlowmineError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    from .synthgen import GenConfig, generate, generate_negative

    if args.scenario:
        catalog, flows = scenario(args.scenario, args.seed)
    elif args.flows:
        flows = [f for p in args.flows.split(",") for f in parse_flows(p)]
        catalog = parse_catalog(args.catalog) if args.catalog else None
    else:
        raise UsageError("gen needs --flows or --scenario")
    config = GenConfig(tuple(flows), cores=args.cores, runs=args.runs, seed=args.seed)
    trace = (generate_negative(config, args.negative) if args.negative
             else generate(config))
    if catalog is not None:
        trace.validate(catalog)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_traces([trace], out)
    if args.export:
        exp = Path(args.export)
        exp.mkdir(parents=True, exist_ok=True)
        if catalog is not None:
            write_catalog(catalog, exp / "catalog.cat")
        write_flows(flows, exp / "truth.flow")
    log.info("wrote %d events to %s", len(trace), out)
    return out.parent, [args.catalog] + (args.flows.split(",") if args.flows else [])


def cmd_graph(args):
    catalog = parse_catalog(args.catalog)
    g = build_graph(catalog, args.predicate)
    name = "cg"
    if args.pair:
        g = reachable_subgraph(g, *args.pair)
        name = f"cg_{args.pair[0]}_{args.pair[1]}"
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_dot(g, catalog, name))
    print(f"{len(g.nodes)} nodes, {len(g.edges)} edges -> {out}")
    return out.parent, [args.catalog]


def cmd_train(args):
    from .seqmodel import ModelConfig, save, train, train_ngram

    catalog = parse_catalog(args.catalog)
    traces = parse_traces(args.traces, catalog)
    if args.ngram:
        scorer = train_ngram(traces, catalog, order=args.ngram, smoothing=args.smoothing)
    else:
        config = ModelConfig(layers=args.layers, heads=args.heads, dim=args.dim,
                             window=args.window, mask_prob=args.mask_prob,
                             epochs=args.epochs, learning_rate=args.lr, seed=args.seed,
                             slice_window=args.slice_window, predicate=args.predicate)
        scorer = train(traces, catalog, config)
        print(f"loss: epoch 1 {scorer.history[0]:.4f}, epoch {len(scorer.history)} "
              f"{scorer.history[-1]:.4f}")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(scorer, out)
    return out.parent, [args.catalog, args.traces]


def cmd_mine(args):
    from .miner import mine, to_flowspec
    from .seqmodel import load

    catalog = parse_catalog(args.catalog)
    traces = parse_traces(args.traces, catalog)
    scorer = load(args.model)
    g = build_graph(catalog, args.predicate)
    result = mine(g, scorer, traces, catalog, theta=args.theta, samples=args.samples,
                  seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for old in list(out.glob("flow_*.flow")) + list(out.glob("flow_*.dot")):
        old.unlink()
    lines = [f"theta = {args.theta}", f"pairs_mined = {len(result.flows)}",
             f"pairs_failed = {len(result.failures)}"]
    for f in result.flows:
        name = f"flow_{f.start}_{f.end}"
        spec = to_flowspec(f, name)
        write_flows([spec], out / f"{name}.flow")
        sub = reachable_subgraph(g, f.start, f.end)
        mined_graph = CausalityGraph(f.nodes, f.edges, sub.predicate_tag, sub.starts, sub.ends)
        (out / f"{name}.dot").write_text(to_dot(mined_graph, catalog, name, f.edge_scores))
        lines.append(f"pair {f.start} {f.end}: kept {len(f.edges)} edges, "
                     f"removed {len(f.removed)}")
        for (a, b), s in f.removed.items():
            lines.append(f"  removed {a} -> {b} score {s:.6g}")
    for s, e, why in result.failures:
        lines.append(f"pair {s} {e}: not mined ({why})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print(f"mined {len(result.flows)} flows, {len(result.failures)} pairs without a path -> {out}")
    return out, [args.catalog, args.traces, args.model]


def cmd_eval(args):
    t0 = time.perf_counter()
    flows = parse_flows(args.flows) if Path(args.flows).exists() else None
    if flows is None:
        raise FileNotFoundError(2, "No such file or directory", args.flows)
    traces = parse_traces(args.traces)
    pairs = [("name", args.name or Path(args.output).stem), ("policy", args.policy),
             ("flows", len(flows)),
             ("size", sum(len(f.nodes) + len(f.edges) for f in flows))]
    if not flows:
        pairs += [("rate", "n/a"), ("reason", "no flows mined")]
    else:
        reports = []
        for i, t in enumerate(traces):
            if args.policy == "greedy":
                r = evaluate_greedy(flows, t)
            else:
                r = evaluate_oracle(flows, t, budget=args.budget, strict=not args.lower_bound)
            reports.append(r)
            pairs += [(f"trace.{i}.events", r.total_events), (f"trace.{i}.accepted", r.accepted),
                      (f"trace.{i}.rate", r.acceptance_rate),
                      (f"trace.{i}.incomplete", r.incomplete_instances),
                      (f"trace.{i}.lower_bound", r.lower_bound)]
            pairs += [(f"trace.{i}.note.{n.event_index}", ",".join(map(str, n.candidates)))
                      for n in r.notes[:args.max_notes]]
        total = merge_reports(reports)
        pairs += [("total_events", total.total_events), ("accepted", total.accepted),
                  ("rejected", total.rejected), ("incomplete", total.incomplete_instances),
                  ("rate", total.acceptance_rate), ("lower_bound", total.lower_bound)]
    if args.truth:
        cmp = compare_flows(flows, parse_flows(args.truth))
        pairs += [("precision", cmp.precision), ("recall", cmp.recall)]
        for (s, e), (tp, nm, nt) in cmp.pairs.items():
            pairs += [(f"pair.{s}_{e}.precision", tp / nm if nm else 1.0),
                      (f"pair.{s}_{e}.recall", tp / nt if nt else 1.0)]
        pairs += [("unmatched_mined", " ".join(f"{s}_{e}" for s, e in cmp.unmatched_mined)),
                  ("unmatched_truth", " ".join(f"{s}_{e}" for s, e in cmp.unmatched_truth))]
    runtime = time.perf_counter() - t0
    pairs.append(("runtime", round(runtime, 3)))
    if args.rt is not None:
        pairs.append(("rt", round(args.rt + runtime, 3)))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_kv((k, _fmt(v)) for k, v in pairs))
    rate = dict(pairs)["rate"]
    print(f"acceptance rate {_fmt(rate)} ({args.policy}) -> {out}")
    return out.parent, [args.flows, args.traces, args.truth]


def render_report(rows: list[dict]) -> tuple[str, list[tuple[str, str]]]:
    """Human table and key=value pairs carrying the same numbers."""
    table = [("benchmark", "Ratio", "size", "RT")]
    kv = []
    rates, sizes, rts = [], [], []
    for row in rows:
        name = row.get("name", "?")
        rate = row.get("rate", "n/a")
        size = int(row.get("size", 0))
        rt = float(row.get("rt", row.get("runtime", 0.0)))
        if rate == "n/a":
            shown = f"n/a ({row.get('reason', 'not evaluated')})"
        else:
            rate = float(rate)
            rates.append(rate)
            shown = f"{rate:.4f}"
        sizes.append(size)
        rts.append(rt)
        table.append((name, shown, str(size), f"{rt:.2f}"))
        kv += [(f"{name}.ratio", shown if rate == "n/a" else f"{rate:.4f}"),
               (f"{name}.size", str(size)), (f"{name}.rt", f"{rt:.2f}")]
        for key in sorted(row):
            if key in ("precision", "recall") or key.startswith("pair."):
                kv.append((f"{name}.{key}", f"{float(row[key]):.4f}"))
    if len(rows) > 1:
        mean = lambda xs: sum(xs) / len(xs) if xs else float("nan")  # noqa: E731
        table.append(("mean", f"{mean(rates):.4f}" if rates else "n/a",
                      f"{mean(sizes):.2f}", f"{mean(rts):.2f}"))
        kv += [("mean.ratio", f"{mean(rates):.4f}" if rates else "n/a"),
               ("mean.size", f"{mean(sizes):.2f}"), ("mean.rt", f"{mean(rts):.2f}")]
    widths = [max(len(r[i]) for r in table) for i in range(4)]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table)
    extra = [f"{k} = {v}" for k, v in kv if ".precision" in k or ".recall" in k]
    if extra:
        text += "\n\n" + "\n".join(extra)
    return text + "\n", kv


def cmd_report(args):
    rows = [loads_kv(Path(p).read_text()) for p in args.reports]
    text, kv = render_report(rows)
    sys.stdout.write(text)
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        out.with_suffix(".kv").write_text(dumps_kv(kv))
        return out.parent, args.reports
    return None, args.reports


# ---------------------------------------------------------------------------
# pipeline


_STAGES = ("gen", "graph", "train", "mine", "eval", "report")
_GENERAL_KEYS = {"seed", "out", "catalog", "traces", "truth"}


def _stage_argv(stage, opts, out, seed, state):
    argv = ["--seed", str(seed), stage]
    d = out / stage
    if stage == "gen":
        state["traces"] = str(d / "trace.trc")
        argv += ["-o", state["traces"]]
        if "scenario" in opts:
            argv += ["--scenario", opts.pop("scenario"), "--export", str(d)]
            state["catalog"] = str(d / "catalog.cat")
            state["truth"] = str(d / "truth.flow")
        else:
            argv += ["--flows", opts.pop("flows", "")]
            if state.get("catalog"):
                argv += ["--catalog", state["catalog"]]
    elif stage == "graph":
        argv += ["--catalog", state["catalog"], "-o", str(d / "cg.dot")]
    elif stage == "train":
        state["model"] = str(d / "model.bin")
        argv += ["--catalog", state["catalog"], "--traces", state["traces"], "-o", state["model"]]
    elif stage == "mine":
        state["flows"] = str(d)
        argv += ["--catalog", state["catalog"], "--traces", state["traces"],
                 "--model", state["model"], "-o", str(d)]
    elif stage == "eval":
        state["eval"] = str(d / "eval.txt")
        argv += ["--flows", state["flows"], "--traces", state["traces"], "-o", state["eval"],
                 "--rt", str(state.get("rt", 0.0))]
        if state.get("truth"):
            argv += ["--truth", state["truth"]]
    elif stage == "report":
        argv += [state["eval"], "-o", str(d / "report.txt")]
    for k, v in opts.items():
        argv += [f"--{k.replace('_', '-')}"] + ([] if v.lower() == "true" else [v])
    return argv


def cmd_pipeline(args):
    cp = configparser.ConfigParser()
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(2, "No such file or directory", str(path))
    cp.read_string(path.read_text())
    unknown = [s for s in cp.sections() if s not in _STAGES + ("general",)]
    if unknown:
        raise UsageError(f"unknown config section(s): {', '.join(unknown)}")
    general = dict(cp["general"]) if cp.has_section("general") else {}
    bad = set(general) - _GENERAL_KEYS
    if bad:
        raise UsageError(f"unknown [general] key(s): {', '.join(sorted(bad))}")
    seed = int(general.get("seed", args.seed))
    out = Path(general.get("out", "flowmine-run"))
    state = {k: general[k] for k in ("catalog", "traces", "truth") if k in general}
    for key in ("catalog", "traces"):
        if key in state and not Path(state[key]).exists():
            raise FileNotFoundError(2, "No such file or directory", state[key])
    parser = build_parser()
    for stage in _STAGES:
        if not cp.has_section(stage):
            continue
        argv = _stage_argv(stage, dict(cp[stage]), out, seed, state)
        if stage != "report" and not state.get("catalog"):
            raise UsageError(f"stage {stage}: no catalog (set [general] catalog or use [gen] scenario)")
        log.info("stage %s: %s", stage, " ".join(argv))
        try:
            sub = parser.parse_args(argv)
        except SystemExit:
            raise UsageError(f"stage {stage}: bad options in config") from None
        t0 = time.perf_counter()
        try:
            _run(sub)
        except (FlowmineError, OSError, UsageError) as exc:
            raise _StageFailure(stage, exc) from exc
        if stage in ("train", "mine"):
            state["rt"] = state.get("rt", 0.0) + time.perf_counter() - t0
    return None, [args.config]


class _StageFailure(Exception):
    def __init__(self, stage, exc):
        self.stage = stage
        self.exc = exc
        super().__init__(f"stage {stage} failed: {_describe(exc)}")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowmine",
                                description="Mine message flow specifications from interleaved traces.")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--manifest-dir", help="write the run manifest here instead of next to the output")
    p.add_argument("--version", action="version", version=f"flowmine {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an interleaved trace from flows")
    g.add_argument("--flows", help="comma-separated .flow files or directories")
    g.add_argument("--catalog", help="catalog used to validate the generated ids")
    g.add_argument("--scenario", choices=SCENARIOS, help="use a built-in flow set")
    g.add_argument("--export", help="directory for the scenario's catalog.cat and truth.flow")
    g.add_argument("--cores", type=int, default=1)
    g.add_argument("--runs", type=int, default=1)
    g.add_argument("--negative", type=float, metavar="RATE",
                   help="emit a corrupted trace the flows cannot fully accept")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("graph", help="export the causality graph as DOT")
    c.add_argument("--catalog", required=True)
    c.add_argument("--predicate", choices=PREDICATES, default="union")
    c.add_argument("--pair", nargs=2, type=int, metavar=("START", "END"),
                   help="only the subgraph between START and END")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(func=cmd_graph)

    t = sub.add_parser("train", help="train a successor scorer")
    t.add_argument("--traces", required=True)
    t.add_argument("--catalog", required=True)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--dim", type=int, default=64)
    t.add_argument("--window", type=int, default=64)
    t.add_argument("--mask-prob", type=float, default=0.15)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--slice-window", type=int, default=16,
                   help="causality slicing window; 0 trains on whole traces")
    t.add_argument("--predicate", choices=PREDICATES, default="union")
    t.add_argument("--ngram", type=int, choices=(2, 3), help="train an n-gram scorer instead")
    t.add_argument("--smoothing", type=float, default=0.0, help="n-gram additive smoothing")
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("mine", help="refine the causality graph into flows")
    m.add_argument("--model", required=True)
    m.add_argument("--catalog", required=True)
    m.add_argument("--traces", required=True)
    m.add_argument("--theta", type=float, default=0.75)
    m.add_argument("--samples", type=int, default=256, help="occurrences sampled per message")
    m.add_argument("--predicate", choices=PREDICATES, default="union")
    m.add_argument("-o", "--output", required=True, help="output directory")
    m.set_defaults(func=cmd_mine)

    e = sub.add_parser("eval", help="acceptance rate of flows on traces")
    e.add_argument("--flows", required=True, help=".flow file or directory")
    e.add_argument("--traces", required=True)
    e.add_argument("--policy", choices=("greedy", "oracle"), default="oracle")
    e.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="oracle search budget in expanded states")
    e.add_argument("--lower-bound", action="store_true",
                   help="report the certified lower bound instead of failing when the budget runs out")
    e.add_argument("--truth", help="ground-truth flows for edge precision/recall")
    e.add_argument("--name", help="benchmark name used in reports")
    e.add_argument("--max-notes", type=int, default=50)
    e.add_argument("--rt", type=float, help=argparse.SUPPRESS)
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="tabulate eval reports")
    r.add_argument("reports", nargs="+", help="key=value files written by eval")
    r.add_argument("-o", "--output", help="table file; a .kv copy is written beside it")
    r.set_defaults(func=cmd_report)

    pl = sub.add_parser("pipeline", help="run stages from a key = value config")
    pl.add_argument("config")
    pl.set_defaults(func=cmd_pipeline)
    return p


def _run(args):
    t0 = time.perf_counter()
    outdir, inputs = args.func(args)
    if outdir is not None:
        where = Path(args.manifest_dir) if args.manifest_dir else Path(outdir)
        write_manifest(where, args.command, vars(args), inputs, args.seed,
                       time.perf_counter() - t0)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except _StageFailure as exc:
        print(f"flowmine: {exc}", file=sys.stderr)
        return _exit_code(exc.exc)
    except Exception as exc:  # noqa: BLE001
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"flowmine: {_describe(exc)}", file=sys.stderr)
        return code
    return EXIT_OK


def _describe(exc):
    if isinstance(exc, OSError) and exc.filename:
        return f"{exc.strerror or exc}: {exc.filename}"
    return str(exc)


def _exit_code(exc):
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, BudgetExceeded):
        return EXIT_BUDGET
    if isinstance(exc, FlowmineError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_DATA
    if isinstance(exc, ValueError):
        return EXIT_USAGE
    return None


if __name__ == "__main__":
    sys.exit(main())
