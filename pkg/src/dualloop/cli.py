"""Command-line entry points: run, bench, objective, verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from dualloop.actions import AnswerAction
from dualloop.backend import ScriptedBackend
from dualloop.config import RunConfig, load_corpus
from dualloop.context import dump_jsonl, load_logs
from dualloop.errors import ContractViolation
from dualloop.gateway.transport import MockTransport
from dualloop.harness import BenchmarkConfig, BenchTask, make_judge, run_benchmark
from dualloop.objectives import OPS, ObjectiveParams, evaluate_fixture, read_fixture
from dualloop.pipeline import MODES, Pipeline
from dualloop.verifier import LexicalChainAuditor, audit_chain

logger = logging.getLogger("dualloop")


def _read_script(path: str) -> tuple[list[dict], list[dict] | None]:
    """A JSON list (or JSONL) of assistant wire messages, or {"model": [...], "auditor": [...]}."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    if isinstance(data, dict):
        return list(data["model"]), list(data["auditor"]) if data.get("auditor") else None
    return list(data), None


def _offline_gateway(cfg: RunConfig, corpus: list[dict[str, str]]):
    """Gateway for scripted runs: mock search over ``corpus`` and pages served from the corpus bodies."""
    pages = {d["url"]: d.get("body") or d.get("snippet", "") for d in corpus if d.get("url")}
    return cfg.gateway(transport=MockTransport(pages), corpus=corpus)


def _pipeline(cfg: RunConfig, mode: str, backend, gateway, auditor=None, max_turns: int | None = None, scripted: bool = False) -> Pipeline:
    chain = LexicalChainAuditor() if scripted else (cfg.model_backend("auditor") if mode in ("global", "heavy") else None)
    if auditor is None and not scripted and mode in ("local", "heavy"):
        auditor = cfg.model_backend("auditor")
    return Pipeline(
        cfg.episode_config(max_turns),
        backend,
        gateway,
        mode,
        auditor=auditor,
        chain_auditor=chain,
        budget=cfg.budget(),
        threshold=cfg.threshold,
        local_every=cfg.local_every,
        runner_mode=cfg.section("verifier").get("runner_mode", "resample"),
    )


def _emit(records: list[dict[str, Any]], out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fp:
            dump_jsonl(records, fp)


def _solve_query(args, mode: str) -> int:
    cfg = RunConfig.load(args.config)
    corpus = load_corpus(args.corpus) if args.corpus else []
    if args.scripted:
        model, auditor = _read_script(args.scripted)
        backend = ScriptedBackend(model)
        auditor_backend = ScriptedBackend(auditor) if auditor else None
        gateway = _offline_gateway(cfg, corpus)
    else:
        backend = cfg.model_backend("model")
        auditor_backend = None
        gateway = cfg.gateway(corpus=corpus or None)
    pipe = _pipeline(cfg, mode, backend, gateway, auditor_backend, args.max_turns, scripted=bool(args.scripted))
    records: list[dict[str, Any]] = []
    answer = pipe.solve(args.query, records.append)
    _emit(records, args.out)
    print(json.dumps(answer.summary_record(), ensure_ascii=False, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    return _solve_query(args, args.verify or RunConfig.load(args.config).verify_mode)


def cmd_verify(args) -> int:
    if args.trajectory:
        # audit a saved trajectory's final answer instead of running the agent
        with open(args.trajectory, encoding="utf-8") as fp:
            logs = load_logs(fp, args.query or "")
        if not logs:
            raise ContractViolation("trajectory file holds no steps")
        log = logs[-1]
        answer = args.answer
        if answer is None:
            last = log.steps[-1].action if log.steps else None
            if not isinstance(last, AnswerAction):
                raise ContractViolation("last step is not an answer; pass --answer")
            answer = last.text
        cfg = RunConfig.load(args.config)
        auditor = cfg.model_backend("auditor") if cfg.endpoint("auditor") or cfg.endpoint("model") else LexicalChainAuditor()
        chain = audit_chain(log, answer, auditor, args.query or log.query)
        print(json.dumps(chain.to_record(answer), ensure_ascii=False, sort_keys=True))
        return 0
    if not args.query:
        raise ContractViolation("verify needs --query or --trajectory")
    return _solve_query(args, args.mode)


def bench_solver(cfg: RunConfig, bench: BenchmarkConfig, mode: str):
    """Per-trial solver. Scripted tasks get a fresh scripted backend and an offline gateway."""

    def solve(task: BenchTask, trial: int, on_record):
        if task.script:
            backend = ScriptedBackend(list(task.script))
            pipe = _pipeline(cfg, mode, backend, _offline_gateway(cfg, bench.corpus), backend, bench.max_turns, scripted=True)
        else:
            pipe = _pipeline(cfg, mode, cfg.model_backend("model"), cfg.gateway(corpus=bench.corpus or None), None, bench.max_turns)
        return pipe.solve(task.question, on_record)

    return solve


def cmd_bench(args) -> int:
    cfg = RunConfig.load(args.run_config)
    bench = BenchmarkConfig.from_file(args.config)
    if args.trials:
        bench.trials = args.trials
    mode = args.verify or cfg.verify_mode
    judge = make_judge(bench.judge, lambda spec: cfg.model_backend("judge"))
    run = run_benchmark(bench, bench_solver(cfg, bench, mode), judge, args.out, figures=not args.no_figures)
    sys.stdout.write(run.metrics.to_json())
    return 0


def cmd_objective(args) -> int:
    params = ObjectiveParams(args.beta, args.lam, args.alpha_c, args.alpha_f, args.beta0, args.beta_ent, args.tau)
    with open(args.fixture, encoding="utf-8") as fp:
        records = read_fixture(fp)
    print(repr(evaluate_fixture(records, args.op, params)))
    return 0


def _query_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config (YAML or JSON)")
    p.add_argument("--scripted", metavar="FILE", help="replay assistant messages from FILE instead of calling a model")
    p.add_argument("--corpus", metavar="FILE", help="local search corpus (JSONL or YAML list of {url,title,snippet,body})")
    p.add_argument("--max-turns", type=int, help="override the per-episode turn budget")
    p.add_argument("--out", metavar="FILE", help="write the trajectory JSON Lines here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualloop", description="Tool-using research agent with restartable episodes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="answer one query")
    p.add_argument("--query", required=True)
    p.add_argument("--verify", choices=MODES, help="verification mode (default from config, else none)")
    _query_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="answer a query with verification, or audit a saved trajectory")
    p.add_argument("--mode", choices=("local", "global", "heavy"), default="global")
    p.add_argument("--query")
    p.add_argument("--trajectory", metavar="FILE", help="audit this trajectory's final answer (global audit only)")
    p.add_argument("--answer", help="answer to audit instead of the trajectory's last answer")
    _query_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--config", required=True, help="benchmark file (YAML)")
    p.add_argument("--run-config", help="run config (YAML or JSON)")
    p.add_argument("--out", default="bench_out", help="output directory")
    p.add_argument("--trials", type=int, help="override k")
    p.add_argument("--verify", choices=MODES)
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("objective", help="evaluate a training objective over a fixture")
    p.add_argument("--fixture", required=True)
    p.add_argument("--op", required=True, choices=OPS)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--alpha-c", type=float, default=1.0)
    p.add_argument("--alpha-f", type=float, default=1.0)
    p.add_argument("--beta0", type=float, default=0.0)
    p.add_argument("--beta-ent", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=-5.0)
    p.set_defaults(func=cmd_objective)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractViolation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
