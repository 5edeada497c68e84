"""Resumable data-generation pipeline over a chat-completion backend.

Each job walks a fixed stage chain: per-frame captioning, transition
inference, narrative synthesis, spatial-context extraction, document
merging, and a final quality check.  Completed stage outputs go to an
append-only JSON-Lines journal keyed by (sample_id, stage); re-running
with the same journal resumes exactly where work stopped, never repeating
a completed backend call.
"""

from __future__ import annotations

import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import cot
from .backends import BackendRequest, TransportError
from .config import Config
from .psa import Answer, StructuredQuestion
from .rewards import extract_option_letter, mra

STAGES = (
    "caption_frames",
    "infer_transitions",
    "synthesize_rpc",
    "extract_context",
    "merge_cot",
    "quality_check",
)

VERDICT_NAMES = ("Hallucination Check", "Logical Consistency", "Format & Correctness")


class PipelineError(RuntimeError):
    pass


class JournalError(PipelineError):
    """The persistence journal is corrupt; the message names the record."""


class AssemblyError(PipelineError):
    """A training sample was requested from an unqualified job."""


@dataclass
class GenerationJob:
    sample_id: str
    frames: tuple[str, ...]
    question: StructuredQuestion | None = None
    question_text: str = ""
    ground_truth: Answer | None = None
    stage_outputs: dict = field(default_factory=dict)
    attempts: dict = field(default_factory=dict)
    verdicts: dict | None = None
    failure_reason: str = ""
    raw_quality_text: str = ""
    tokens_used: int = 0

    @property
    def status(self) -> str:
        if self.failure_reason:
            return f"failed({self.failure_reason})"
        done = [s for s in STAGES if s in self.stage_outputs]
        if len(done) == len(STAGES) and self.verdicts is not None:
            return "done"
        if not done:
            return "pending"
        return f"stage-complete({done[-1]})"

    @property
    def text(self) -> str:
        return self.question.text if self.question is not None else self.question_text

    @property
    def truth(self) -> Answer | None:
        if self.question is not None and self.question.ground_truth is not None:
            return self.question.ground_truth
        return self.ground_truth

    def targets_hint(self) -> str:
        if self.question is None:
            return ""
        return ", ".join(ref.display() for ref in self.question.explicit_targets)

    def all_verdicts_pass(self) -> bool:
        return self.verdicts is not None and all(
            name in self.verdicts and self.verdicts[name]["passed"]
            for name in VERDICT_NAMES
        )


class TemplateSet:
    """Per-stage prompt templates with {{placeholder}} substitution.

    A template file is a system part and a user part separated by a line
    of ``===``; the system part starts with a ``Stage: <name>`` line.
    """

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory else None
        self._cache: dict[str, tuple[str, str]] = {}

    def _load(self, name: str) -> str:
        if self._dir is not None:
            path = self._dir / f"{name}.txt"
            if not path.exists():
                raise PipelineError(f"missing template {path}")
            return path.read_text(encoding="utf-8")
        ref = resources.files("egoscene").joinpath(f"templates/{name}.txt")
        return ref.read_text(encoding="utf-8")

    def parts(self, name: str) -> tuple[str, str]:
        if name not in self._cache:
            raw = self._load(name)
            if "\n===\n" in raw:
                system, user = raw.split("\n===\n", 1)
            else:
                system, user = "", raw
            self._cache[name] = (system.strip(), user.strip())
        return self._cache[name]

    def render(self, stage: str, variables: dict) -> tuple[str, str]:
        system, user = self.parts(stage)
        for key, value in variables.items():
            user = user.replace("{{" + key + "}}", str(value))
        return system, user

    def instruction(self) -> str:
        return self._load("instruction").strip()


def _stage_variables(job: GenerationJob, stage: str) -> dict:
    frames_text = "\n".join(
        f"Frame {i}: {text}" for i, text in enumerate(job.frames)
    )
    out = job.stage_outputs
    truth = job.truth
    common = {
        "frames": frames_text,
        "question": job.text,
        "targets_hint": job.targets_hint(),
        "ground_truth": truth.render() if truth is not None else "",
        "captions": out.get("caption_frames", ""),
        "transitions": out.get("infer_transitions", ""),
        "rpc": out.get("synthesize_rpc", ""),
        "context": out.get("extract_context", ""),
        "cot": out.get("merge_cot", ""),
    }
    return common


def _parse_judge_verdicts(text: str) -> dict | None:
    verdicts: dict = {}
    pending = None
    for line in text.splitlines():
        stripped = line.strip()
        low = stripped.lower()
        for name in ("Hallucination Check", "Logical Consistency"):
            if low.startswith(name.lower() + ":"):
                value = stripped.split(":", 1)[1].strip().upper()
                if value not in ("PASS", "FAIL"):
                    return None
                verdicts[name] = {"passed": value == "PASS", "rationale": ""}
                pending = name
        if low.startswith("rationale:") and pending:
            verdicts[pending]["rationale"] = stripped.split(":", 1)[1].strip()
            pending = None
    if set(verdicts) != {"Hallucination Check", "Logical Consistency"}:
        return None
    return verdicts


def _format_correctness(job: GenerationJob, markers: cot.CotMarkers, thresholds) -> dict:
    """Local deterministic check: the merged document must parse and its
    answer must match the ground truth."""
    merged = job.stage_outputs.get("merge_cot", "")
    try:
        doc = cot.parse(merged, markers)
    except cot.CoTParseError as exc:
        return {"passed": False, "rationale": f"document does not parse: {exc}"}
    truth = job.truth
    if truth is None:
        return {"passed": True, "rationale": "format ok; no ground truth to compare"}
    if truth.kind == "letter":
        got = extract_option_letter(doc.answer)
        if got != truth.letter:
            return {
                "passed": False,
                "rationale": f"answer {doc.answer!r} does not match {truth.letter}",
            }
        return {"passed": True, "rationale": "format ok, answer matches"}
    m = re.findall(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?", doc.answer)
    if not m:
        return {"passed": False, "rationale": f"no number in answer {doc.answer!r}"}
    score = mra(float(m[-1]), truth.value, tuple(thresholds))
    if score < 1.0:
        return {
            "passed": False,
            "rationale": f"answer {m[-1]} too far from {truth.value}",
        }
    return {"passed": True, "rationale": "format ok, answer matches"}


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0
        self._lock = threading.Lock()

    def spend(self, tokens: int):
        with self._lock:
            self.used += tokens

    def exhausted(self) -> bool:
        with self._lock:
            return bool(self.limit) and self.used >= self.limit


def run_stage(
    job: GenerationJob,
    stage: str,
    backend,
    templates: TemplateSet,
    config: Config,
    budget: _Budget | None = None,
) -> GenerationJob:
    """Execute one stage with bounded retries; failures leave the job
    resumable with all earlier outputs intact."""
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}")
    for predecessor in STAGES[: STAGES.index(stage)]:
        if predecessor not in job.stage_outputs:
            raise PipelineError(
                f"stage {stage} requires {predecessor} to be complete"
            )

    if budget is not None and budget.exhausted():
        job.failure_reason = "token-budget-exhausted"
        return job

    system, user = templates.render(stage, _stage_variables(job, stage))
    request = BackendRequest(
        model_hint=config.backend.model_hints.get(stage, "default"),
        system_text=system,
        user_parts=({"type": "text", "text": user},),
        temperature=config.backend.temperature,
        max_output_tokens=config.backend.max_output_tokens,
    )

    max_attempts = max(config.pipeline.retry_limit, 1)
    response = None
    for attempt in range(max_attempts):
        job.attempts[stage] = job.attempts.get(stage, 0) + 1
        try:
            response = backend.complete(request)
            break
        except TransportError:
            if attempt + 1 < max_attempts and config.pipeline.backoff_seconds:
                time.sleep(config.pipeline.backoff_seconds * (2**attempt))
    if response is None:
        job.failure_reason = "backend-exhausted"
        return job

    job.tokens_used += response.token_usage
    if budget is not None:
        budget.spend(response.token_usage)

    if stage == "quality_check":
        judged = _parse_judge_verdicts(response.text)
        if judged is None:
            job.failure_reason = "quality-verdict-parse"
            job.raw_quality_text = response.text
            return job
        judged["Format & Correctness"] = _format_correctness(
            job, config.cot, config.reward.mra_thresholds
        )
        job.verdicts = judged

    job.stage_outputs[stage] = response.text
    job.failure_reason = ""
    return job


# --- journal --------------------------------------------------------------

class Journal:
    """Append-only JSONL record of completed stages; single writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict:
        completed: dict = {}
        if not self.path.exists():
            return completed
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = (record["sample_id"], record["stage"])
                except (ValueError, KeyError) as exc:
                    raise JournalError(f"{self.path}:{lineno}: {exc}") from exc
                completed[key] = record
        return completed

    def append(self, record: dict):
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _restore_job(job: GenerationJob, completed: dict):
    for stage in STAGES:
        record = completed.get((job.sample_id, stage))
        if record is None:
            break  # stage chain is prefix-closed
        job.stage_outputs[stage] = record["output"]
        job.attempts[stage] = record.get("attempts", 1)
        job.tokens_used += record.get("tokens", 0)
        if stage == "quality_check":
            job.verdicts = record.get("verdicts")


@dataclass
class Manifest:
    jobs: list[dict]
    total_tokens: int
    n_done: int
    n_failed: int

    def to_records(self) -> list[dict]:
        summary = {
            "record": "summary",
            "n_jobs": len(self.jobs),
            "n_done": self.n_done,
            "n_failed": self.n_failed,
            "total_tokens": self.total_tokens,
        }
        return self.jobs + [summary]

    def write(self, path: str | Path):
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.to_records():
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def run_pipeline(
    jobs: list[GenerationJob],
    backend,
    templates: TemplateSet,
    config: Config,
    persist_dir: str | Path | None = None,
) -> Manifest:
    """Run every job to completion (or failure), resuming from the journal."""
    ids = [j.sample_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise PipelineError("duplicate sample_ids in the job batch")

    journal = None
    if persist_dir is not None:
        journal = Journal(Path(persist_dir) / "journal.jsonl")
        completed = journal.load()
        for job in jobs:
            _restore_job(job, completed)

    budget = _Budget(config.pipeline.token_budget)

    def work(job: GenerationJob) -> GenerationJob:
        job.failure_reason = ""
        for stage in STAGES:
            if stage in job.stage_outputs and (
                stage != "quality_check" or job.verdicts is not None
            ):
                continue
            tokens_before = job.tokens_used
            run_stage(job, stage, backend, templates, config, budget)
            if job.failure_reason:
                break
            if journal is not None:
                record = {
                    "sample_id": job.sample_id,
                    "stage": stage,
                    "output": job.stage_outputs[stage],
                    "attempts": job.attempts.get(stage, 1),
                    "tokens": job.tokens_used - tokens_before,
                }
                if stage == "quality_check":
                    record["verdicts"] = job.verdicts
                journal.append(record)
        return job

    if config.pipeline.parallelism > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.pipeline.parallelism) as pool:
            list(pool.map(work, jobs))
    else:
        for job in jobs:
            work(job)

    rows = []
    n_done = n_failed = 0
    for job in jobs:
        status = job.status
        if status == "done":
            n_done += 1
        elif status.startswith("failed"):
            n_failed += 1
        rows.append(
            {
                "sample_id": job.sample_id,
                "status": status,
                "stages_completed": [s for s in STAGES if s in job.stage_outputs],
                "verdicts": job.verdicts,
                "tokens": job.tokens_used,
                "attempts": dict(job.attempts),
            }
        )
    return Manifest(
        jobs=rows,
        total_tokens=sum(j.tokens_used for j in jobs),
        n_done=n_done,
        n_failed=n_failed,
    )


# --- sample assembly -------------------------------------------------------

def _plain_truth(answer: Answer):
    return answer.letter if answer.kind == "letter" else answer.value


def assemble_sft_sample(job: GenerationJob, templates: TemplateSet) -> dict:
    """Prompt/target pair for supervised tuning; refuses filtered jobs."""
    if job.status != "done":
        raise AssemblyError(f"{job.sample_id} is {job.status}, not done")
    if not job.all_verdicts_pass():
        failing = [
            name for name, v in (job.verdicts or {}).items() if not v["passed"]
        ]
        raise AssemblyError(
            f"{job.sample_id} failed quality checks: {', '.join(failing)}"
        )
    target = job.stage_outputs["merge_cot"]
    record = {
        "sample_id": job.sample_id,
        "prompt_text": job.text + "\n\n" + templates.instruction(),
        "target_text": target,
    }
    if job.question is not None:
        record["question_id"] = job.question.question_id
        record["task_type"] = job.question.task_type
    truth = job.truth
    if truth is not None:
        record["ground_truth"] = _plain_truth(truth)
        record["raw_model_output"] = target  # lets the scorer consume this file
    return record


def assemble_rl_sample(
    question: StructuredQuestion,
    templates: TemplateSet,
    answer_key: Answer | None = None,
) -> dict:
    """Prompt plus ground truth only; RL rollouts carry no target text."""
    truth = question.ground_truth or answer_key
    if truth is None:
        raise AssemblyError(f"{question.question_id} has no ground truth")
    return {
        "question_id": question.question_id,
        "task_type": question.task_type,
        "prompt_text": question.text + "\n\n" + templates.instruction(),
        "ground_truth": _plain_truth(truth),
        "ground_truth_detail": truth.to_dict(),
    }


# --- job sources -------------------------------------------------------------

def job_from_dict(d: dict) -> GenerationJob:
    question = None
    if "question" in d and isinstance(d["question"], dict):
        question = StructuredQuestion.from_dict(d["question"])
    gt = d.get("ground_truth")
    return GenerationJob(
        sample_id=str(d["sample_id"]),
        frames=tuple(str(f) for f in d["frames"]),
        question=question,
        question_text=d.get("question_text", ""),
        ground_truth=Answer.from_dict(gt) if isinstance(gt, dict) else None,
    )


def jobs_from_file(path: str | Path) -> list[GenerationJob]:
    jobs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                jobs.append(job_from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise PipelineError(f"{path}:{lineno}: bad job record: {exc}") from exc
    return jobs


def jobs_from_dataset(path: str | Path, limit: int | None = None) -> list[GenerationJob]:
    """One job per simulator question, frames taken from the observation
    descriptions (the simulator stands in for visual input)."""
    jobs: list[GenerationJob] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            frames = tuple(o["description"] for o in record["observations"])
            for q in record["questions"]:
                jobs.append(
                    GenerationJob(
                        sample_id=q["question_id"],
                        frames=frames,
                        question=StructuredQuestion.from_dict(q),
                    )
                )
                if limit is not None and len(jobs) >= limit:
                    return jobs
    return jobs
