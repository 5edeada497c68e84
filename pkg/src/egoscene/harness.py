"""Score prediction files against ground truth, task family by family.

Multiple-choice families score by exact letter match, numeric families by
mean relative accuracy.  Answers come out of the structured document tags
when the output parses, otherwise a fallback extractor takes the last
option letter or number in the raw text, and the method used is logged
per record so runs stay auditable.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field

from . import cot
from .psa import MCQ_TASKS, NUMERIC_TASKS, TASK_TYPES
from .rewards import DEFAULT_MRA_THRESHOLDS, mcq_accuracy, mra

TASK_LABELS = {
    "object_count": "Obj. Count",
    "absolute_distance": "Abs. Dist.",
    "object_size": "Obj. Size",
    "room_size": "Room Size",
    "relative_distance": "Rel. Dist.",
    "relative_direction": "Rel. Dir.",
    "route_plan": "Route Plan",
    "appearance_order": "Appr. Order",
}

_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")
_LETTER_RE = re.compile(r"\b([A-Da-d])\b")


class ScoreRunError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    question_id: str
    task_type: str
    raw_model_output: str
    ground_truth: object
    extracted_answer: str = ""
    extraction_method: str = "none"


@dataclass
class TaskScore:
    n: int = 0
    total: float = 0.0

    @property
    def score(self) -> float:
        return self.total / self.n if self.n else 0.0

    @property
    def display(self) -> float:
        return 100.0 * self.score


@dataclass
class ScoreReport:
    per_task: dict = field(default_factory=dict)
    overall: float | None = None  # display scale, None when no data
    metadata: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    records: list = field(default_factory=list)


def aggregate_overall(display_scores: list[float]) -> float:
    """Unweighted mean of the per-task display scores.

    Permutation-invariant by construction (exact summation), so record
    order can never change a reported number.
    """
    if not display_scores:
        raise ValueError("no per-task scores to aggregate")
    return math.fsum(display_scores) / len(display_scores)


def extract_answer(
    raw_model_output: str, markers: cot.CotMarkers = cot.DEFAULT_MARKERS
) -> tuple[str, str]:
    """(answer text, method): tag extraction wins, fallback takes the last
    option letter or number, empty when nothing matches."""
    try:
        doc = cot.parse(raw_model_output, markers)
        return doc.answer, "tag"
    except cot.CoTParseError:
        pass
    candidates = []
    for m in _LETTER_RE.finditer(raw_model_output):
        candidates.append((m.start(), m.group(1).upper()))
    for m in _NUMBER_RE.finditer(raw_model_output):
        candidates.append((m.start(), m.group(0)))
    if not candidates:
        return "", "none"
    return max(candidates, key=lambda c: c[0])[1], "fallback"


def _truth_letter(value) -> str:
    if isinstance(value, dict):
        value = value.get("letter", "")
    text = str(value).strip().upper()
    if text not in ("A", "B", "C", "D"):
        raise ValueError(f"bad ground-truth letter {value!r}")
    return text


def _truth_number(value) -> float:
    if isinstance(value, dict):
        value = value.get("value")
    number = float(value)
    if not math.isfinite(number):
        raise ValueError(f"bad ground-truth number {value!r}")
    return number


def score_record(
    record: PredictionRecord,
    markers: cot.CotMarkers = cot.DEFAULT_MARKERS,
    thresholds: tuple[float, ...] = DEFAULT_MRA_THRESHOLDS,
) -> tuple[PredictionRecord, float]:
    extracted, method = extract_answer(record.raw_model_output, markers)
    scored = PredictionRecord(
        question_id=record.question_id,
        task_type=record.task_type,
        raw_model_output=record.raw_model_output,
        ground_truth=record.ground_truth,
        extracted_answer=extracted,
        extraction_method=method,
    )
    if record.task_type in MCQ_TASKS:
        value = float(mcq_accuracy(extracted, _truth_letter(record.ground_truth)))
    else:
        numbers = _NUMBER_RE.findall(extracted)
        if not numbers:
            value = 0.0
        else:
            value = mra(
                float(numbers[-1]), _truth_number(record.ground_truth), thresholds
            )
    return scored, value


def score_run(
    predictions_path,
    markers: cot.CotMarkers = cot.DEFAULT_MARKERS,
    thresholds: tuple[float, ...] = DEFAULT_MRA_THRESHOLDS,
    strict: bool = False,
    run_id: str = "",
) -> ScoreReport:
    """Score a JSON-Lines predictions file into a per-task report.

    Structurally bad records are listed in the error section; when the
    task family is still recoverable they count against it with score 0,
    otherwise they are dropped.  Strict mode aborts on the first bad
    record instead.
    """
    report = ScoreReport(
        metadata={
            "run_id": run_id,
            "predictions": str(predictions_path),
            "mra_thresholds": list(thresholds),
        }
    )
    per_task: dict[str, TaskScore] = {}
    seen_ids: set[str] = set()

    with open(predictions_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            task = None
            try:
                raw = json.loads(line)
                task = raw.get("task_type")
                if task not in TASK_TYPES:
                    raise ValueError(f"unknown task family {task!r}")
                qid = str(raw["question_id"])
                if qid in seen_ids:
                    raise ValueError(f"duplicate question_id {qid!r}")
                seen_ids.add(qid)
                record = PredictionRecord(
                    question_id=qid,
                    task_type=task,
                    raw_model_output=str(raw["raw_model_output"]),
                    ground_truth=raw["ground_truth"],
                )
                scored, value = score_record(record, markers, thresholds)
            except (ValueError, KeyError, TypeError) as exc:
                message = f"line {lineno}: {exc}"
                if strict:
                    raise ScoreRunError(message) from exc
                report.errors.append(message)
                if task in TASK_TYPES:
                    bucket = per_task.setdefault(task, TaskScore())
                    bucket.n += 1
                continue
            bucket = per_task.setdefault(scored.task_type, TaskScore())
            bucket.n += 1
            bucket.total = math.fsum([bucket.total, value])
            report.records.append(scored)

    report.per_task = {task: per_task[task] for task in TASK_TYPES if task in per_task}
    if report.per_task:
        report.overall = aggregate_overall(
            [ts.display for ts in report.per_task.values()]
        )
    return report


def render_text_table(report: ScoreReport) -> str:
    """Fixed nine-column layout: overall, four numeric, four choice tasks."""
    columns = ["Overall"] + [TASK_LABELS[t] for t in NUMERIC_TASKS + MCQ_TASKS]
    scores = ["-" if report.overall is None else f"{report.overall:.2f}"]
    counts = [""]
    for task in NUMERIC_TASKS + MCQ_TASKS:
        ts = report.per_task.get(task)
        scores.append(f"{ts.display:.2f}" if ts else "-")
        counts.append(f"n={ts.n}" if ts else "")
    widths = [
        max(len(c), len(s), len(n)) for c, s, n in zip(columns, scores, counts)
    ]
    rows = [
        "  ".join(text.ljust(w) for text, w in zip(row, widths)).rstrip()
        for row in (columns, scores, counts)
    ]
    lines = [rows[0], "-" * len(rows[0]), rows[1], rows[2]]
    if report.errors:
        lines.append("")
        lines.append(f"errors ({len(report.errors)}):")
        lines.extend(f"  {e}" for e in report.errors)
    return "\n".join(lines) + "\n"


def write_csv(report: ScoreReport, path):
    """One row per task plus the overall row; scores at full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "n", "score"])
        for task in NUMERIC_TASKS + MCQ_TASKS:
            ts = report.per_task.get(task)
            if ts:
                writer.writerow([task, ts.n, repr(ts.display)])
            else:
                writer.writerow([task, 0, ""])
        writer.writerow(
            ["overall", "", "" if report.overall is None else repr(report.overall)]
        )


def read_csv_scores(path) -> dict:
    """Inverse of write_csv for round-trip checks."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["task"]] = float(row["score"]) if row["score"] else None
    return out


def emit_report(report: ScoreReport, fmt: str, path) -> None:
    if fmt == "text-table":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_text_table(report))
    elif fmt == "csv":
        write_csv(report, path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
