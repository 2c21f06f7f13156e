"""Benchmark runner: k independent trials per task, judged, aggregated as avg@k."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import yaml

from dualloop import prompts
from dualloop.actions import AnswerAction
from dualloop.agent import FinalAnswer
from dualloop.backend import ChatRequest, SamplingParams
from dualloop.context import dump_jsonl
from dualloop.errors import ContractViolation, ScriptExhausted

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchTask:
    id: str
    question: str
    answer: str
    script: tuple[dict[str, Any], ...] | None = None


@dataclass
class BenchmarkConfig:
    name: str
    tasks: list[BenchTask]
    max_turns: int = 200
    trials: int = 1
    judge: dict[str, Any] = field(default_factory=lambda: {"type": "normalized"})
    workers: int = 1
    corpus: list[dict[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ContractViolation("trials must be >= 1")
        if self.max_turns < 1:
            raise ContractViolation("max_turns must be >= 1")
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ContractViolation("task ids must be unique")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base: Path | None = None) -> "BenchmarkConfig":
        raw_tasks = list(d.get("tasks") or [])
        if d.get("tasks_file"):
            path = Path(d["tasks_file"])
            if base is not None and not path.is_absolute():
                path = base / path
            raw_tasks += [json.loads(ln) for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        tasks = [
            BenchTask(str(t["id"]), t["question"], str(t["answer"]), tuple(t["script"]) if t.get("script") else None)
            for t in raw_tasks
        ]
        return cls(
            name=str(d.get("name", "benchmark")),
            tasks=tasks,
            max_turns=int(d.get("max_turns", 200)),
            trials=int(d.get("trials", 1)),
            judge=dict(d.get("judge") or {"type": "normalized"}),
            workers=int(d.get("workers", 1)),
            corpus=list(d.get("corpus") or []),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "BenchmarkConfig":
        path = Path(path)
        return cls.from_dict(yaml.safe_load(path.read_text(encoding="utf-8")) or {}, base=path.parent)


@dataclass(frozen=True)
class JudgeVerdict:
    task_id: str
    trial: int
    match: bool
    rationale: str = ""


# -- judges -----------------------------------------------------------------------------

_PUNCT = str.maketrans({c: " " for c in string.punctuation})


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().translate(_PUNCT).split())


class ExactJudge:
    def judge(self, question: str, reference: str, answer: str) -> tuple[bool, str]:
        ok = answer.strip() == reference.strip()
        return ok, "exact match" if ok else "answer differs from reference"


class NormalizedJudge:
    """Match after lowercasing, dropping punctuation and collapsing whitespace."""

    def judge(self, question, reference, answer):
        ok = normalize_answer(answer) == normalize_answer(reference)
        return ok, "normalized match" if ok else "normalized answer differs from reference"


class ModelJudge:
    def __init__(self, backend, retries: int = 2):
        self.backend = backend
        self.retries = retries
        self.sampling = SamplingParams(temperature=0.0, top_p=1.0, max_output_tokens=1024)

    def judge(self, question, reference, answer):
        prompt = prompts.load("judge").format(question=question, reference=reference, answer=answer)
        request = ChatRequest(({"role": "user", "content": prompt},), sampling=self.sampling)
        last = None
        for _ in range(self.retries + 1):
            try:
                resp = self.backend.complete(request)
            except ScriptExhausted:
                raise
            except Exception as exc:
                last = exc
                continue
            if isinstance(resp.action, AnswerAction) and resp.action.well_formed:
                verdict = resp.action.text.strip().lower()
                return verdict.startswith("yes"), resp.thought or verdict
            last = ValueError("judge reply had no yes/no verdict")
        return False, f"judge failed: {last}"


def judge_answer(question: str, reference: str, answer: str, judge, task_id: str = "", trial: int = 0) -> JudgeVerdict:
    if not (question.strip() and reference.strip() and answer.strip()):
        raise ContractViolation("question, reference and answer must be non-empty")
    match, rationale = judge.judge(question, reference, answer)
    return JudgeVerdict(task_id, trial, bool(match), rationale)


def make_judge(spec: dict[str, Any] | None, backend_factory: Callable[[dict], Any] | None = None):
    kind = (spec or {}).get("type", "normalized")
    if kind == "exact":
        return ExactJudge()
    if kind == "normalized":
        return NormalizedJudge()
    if kind == "model":
        if backend_factory is None:
            raise ContractViolation("a model judge needs an endpoint")
        return ModelJudge(backend_factory(spec))
    raise ContractViolation(f"unknown judge type {kind!r}")


# -- running and aggregation -----------------------------------------------------------


@dataclass
class TrialOutcome:
    task_id: str
    trial: int
    answer: FinalAnswer | None
    error: str | None = None
    records: list[dict[str, Any]] = field(default_factory=list, repr=False)

    @property
    def steps(self) -> int:
        return self.answer.total_steps if self.answer else 0

    @property
    def episodes(self) -> int:
        return self.answer.episode if self.answer else 0


@dataclass
class TaskMetrics:
    id: str
    score: float
    matched: int
    trials: int
    mean_steps: float


@dataclass
class RunMetrics:
    name: str
    score: float
    mean_steps: float
    mean_episodes: float
    trials: int
    per_task: list[TaskMetrics]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


Solver = Callable[[BenchTask, int, Callable[[dict], None]], FinalAnswer]


def aggregate(
    tasks: Sequence[BenchTask], verdicts: Iterable[JudgeVerdict], outcomes: Iterable[TrialOutcome], trials: int, name: str = "benchmark"
) -> RunMetrics:
    """avg@k per task, macro-averaged over tasks; steps count every episode of every trial."""
    by_key = {(v.task_id, v.trial): v for v in verdicts}
    steps = {(o.task_id, o.trial): o for o in outcomes}
    missing = [(t.id, k) for t in tasks for k in range(trials) if (t.id, k) not in by_key]
    if missing:
        raise ContractViolation(f"missing verdicts for {missing[:5]}")
    per_task = []
    for t in tasks:
        matched = sum(by_key[(t.id, k)].match for k in range(trials))
        trial_steps = [steps[(t.id, k)].steps if (t.id, k) in steps else 0 for k in range(trials)]
        per_task.append(TaskMetrics(t.id, 100.0 * matched / trials, matched, trials, math.fsum(trial_steps) / trials))
    all_outcomes = [steps.get((t.id, k)) for t in tasks for k in range(trials)]
    n = len(all_outcomes)
    score = math.fsum(tm.score for tm in per_task) / len(per_task) if per_task else 0.0
    mean_steps = math.fsum(o.steps if o else 0 for o in all_outcomes) / n if n else 0.0
    mean_episodes = math.fsum(o.episodes if o else 0 for o in all_outcomes) / n if n else 0.0
    return RunMetrics(name, score, mean_steps, mean_episodes, trials, per_task)


def _run_trial(task: BenchTask, trial: int, solve: Solver) -> TrialOutcome:
    records: list[dict[str, Any]] = []
    try:
        answer = solve(task, trial, records.append)
    except Exception as exc:  # contained: a crashed trial is a non-match
        logger.warning("task %s trial %d crashed: %s", task.id, trial, exc)
        return TrialOutcome(task.id, trial, None, f"{type(exc).__name__}: {exc}", records)
    return TrialOutcome(task.id, trial, answer, None, records)


def _judge_outcome(task: BenchTask, outcome: TrialOutcome, judge) -> JudgeVerdict:
    if outcome.answer is None:
        return JudgeVerdict(task.id, outcome.trial, False, f"trial failed: {outcome.error}")
    try:
        return judge_answer(task.question, task.answer, outcome.answer.text, judge, task.id, outcome.trial)
    except Exception as exc:
        return JudgeVerdict(task.id, outcome.trial, False, f"judging failed: {exc}")


@dataclass
class BenchmarkRun:
    metrics: RunMetrics
    verdicts: list[JudgeVerdict]
    outcomes: list[TrialOutcome]


def run_benchmark(config: BenchmarkConfig, solve: Solver, judge=None, out_dir: str | Path | None = None, figures: bool = True) -> BenchmarkRun:
    judge = judge or make_judge(config.judge)
    jobs = [(t, k) for t in config.tasks for k in range(config.trials)]

    def work(job):
        task, trial = job
        outcome = _run_trial(task, trial, solve)
        return outcome, _judge_outcome(task, outcome, judge)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    outcomes = [o for o, _ in results]
    verdicts = [v for _, v in results]
    metrics = aggregate(config.tasks, verdicts, outcomes, config.trials, config.name)
    run = BenchmarkRun(metrics, verdicts, outcomes)
    if out_dir is not None:
        write_outputs(run, Path(out_dir), figures=figures)
    return run


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def write_outputs(run: BenchmarkRun, out: Path, figures: bool = True) -> None:
    """metrics.json, per_task.csv, verdicts.jsonl, one trajectory file per trial, and optional figures."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(run.metrics.to_json(), encoding="utf-8")
    with open(out / "per_task.csv", "w", newline="", encoding="utf-8") as fp:
        w = csv.writer(fp)
        w.writerow(["task_id", "score", "matched", "trials", "mean_steps"])
        for tm in run.metrics.per_task:
            w.writerow([tm.id, f"{tm.score:.1f}", tm.matched, tm.trials, f"{tm.mean_steps:.2f}"])
    with open(out / "verdicts.jsonl", "w", encoding="utf-8") as fp:
        dump_jsonl(({"record": "verdict", **asdict(v)} for v in run.verdicts), fp)
    traj = out / "trajectories"
    traj.mkdir(exist_ok=True)
    for o in run.outcomes:
        with open(traj / f"{_safe(o.task_id)}__trial{o.trial}.jsonl", "w", encoding="utf-8") as fp:
            recs = list(o.records)
            if o.error:
                recs.append({"record": "error", "error": o.error})
            dump_jsonl(recs, fp)
    if figures:
        from dualloop.reports import plot_task_scores

        plot_task_scores(run.metrics, out / "per_task.png")
