"""Progressive spatial analysis over global scene graphs.

Given a structured question, the engine resolves the explicitly mentioned
target objects, expands the candidate set through graph neighborhoods so
implicit anchor objects are pulled in, collects the relations and
relational paths among the candidates, and answers deterministically.
Metric tasks additionally consume per-object geometry supplied by the
scene simulator; the engine refuses to fabricate distances from a purely
qualitative graph.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .geometry import route_instructions, wrap_pi
from .scene_graph import (
    GlobalSceneGraph,
    INVERSE_PREDICATE,
    ObjectNode,
    neighborhood,
    relation_to_dict,
)

NUMERIC_TASKS = ("object_count", "absolute_distance", "object_size", "room_size")
MCQ_TASKS = ("relative_distance", "relative_direction", "route_plan", "appearance_order")
TASK_TYPES = NUMERIC_TASKS + MCQ_TASKS

OPTION_LABELS = ("A", "B", "C", "D")


class TargetNotFoundError(ValueError):
    """No graph object matches an explicitly mentioned target reference."""


class AmbiguousTargetError(ValueError):
    """Several graph objects match a reference that must be unique."""


class MissingAnnotationsError(ValueError):
    """A metric task was asked without simulator geometry attached."""


@dataclass(frozen=True)
class ObjectRef:
    category: str
    attributes: frozenset[str] = frozenset()

    def matches(self, node: ObjectNode) -> bool:
        return node.category == self.category and self.attributes <= node.attributes

    def display(self) -> str:
        if self.attributes:
            return " ".join(sorted(self.attributes)) + " " + self.category
        return self.category

    def to_dict(self) -> dict:
        return {"category": self.category, "attributes": sorted(self.attributes)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectRef":
        return cls(d["category"], frozenset(d.get("attributes", ())))


@dataclass(frozen=True)
class Option:
    label: str
    text: str


@dataclass(frozen=True)
class Answer:
    """Either a choice letter or a number with a unit."""

    kind: str  # "letter" | "number"
    letter: str = ""
    value: float = 0.0
    unit: str = ""

    def __post_init__(self):
        if self.kind not in ("letter", "number"):
            raise ValueError(f"bad answer kind {self.kind!r}")
        if self.kind == "letter" and self.letter not in OPTION_LABELS:
            raise ValueError(f"bad option letter {self.letter!r}")
        if self.kind == "number" and not (
            math.isfinite(self.value) and self.value >= 0
        ):
            raise ValueError(f"numeric answer must be finite and >= 0: {self.value}")

    def render(self) -> str:
        if self.kind == "letter":
            return self.letter
        text = f"{self.value:.10g}"
        return f"{text} {self.unit}" if self.unit else text

    def to_dict(self) -> dict:
        if self.kind == "letter":
            return {"kind": "letter", "letter": self.letter}
        return {"kind": "number", "value": self.value, "unit": self.unit}

    @classmethod
    def from_dict(cls, d: dict) -> "Answer":
        if d["kind"] == "letter":
            return cls("letter", letter=d["letter"])
        return cls("number", value=d["value"], unit=d.get("unit", ""))


@dataclass(frozen=True)
class StructuredQuestion:
    question_id: str
    task_type: str
    text: str
    explicit_targets: tuple[ObjectRef, ...]
    options: tuple[Option, ...] = ()
    ground_truth: Answer | None = None

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"unknown task type {self.task_type!r}")
        if self.is_multiple_choice:
            if not self.options:
                raise ValueError(f"{self.task_type} question needs options")
            if self.ground_truth is not None and self.ground_truth.kind != "letter":
                raise ValueError("multiple-choice ground truth must be a letter")
            labels = [o.label for o in self.options]
            if labels != list(OPTION_LABELS[: len(labels)]):
                raise ValueError(f"option labels must be A.. in order, got {labels}")
        else:
            if self.options:
                raise ValueError(f"{self.task_type} question must not carry options")
            if self.ground_truth is not None and self.ground_truth.kind != "number":
                raise ValueError("numeric ground truth must be a number")

    @property
    def is_multiple_choice(self) -> bool:
        return self.task_type in MCQ_TASKS

    def to_dict(self) -> dict:
        d = {
            "question_id": self.question_id,
            "task_type": self.task_type,
            "text": self.text,
            "explicit_targets": [t.to_dict() for t in self.explicit_targets],
            "options": [{"label": o.label, "text": o.text} for o in self.options],
        }
        if self.ground_truth is not None:
            d["ground_truth"] = self.ground_truth.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredQuestion":
        gt = d.get("ground_truth")
        return cls(
            question_id=d["question_id"],
            task_type=d["task_type"],
            text=d["text"],
            explicit_targets=tuple(
                ObjectRef.from_dict(t) for t in d["explicit_targets"]
            ),
            options=tuple(Option(o["label"], o["text"]) for o in d.get("options", ())),
            ground_truth=Answer.from_dict(gt) if gt else None,
        )


@dataclass(frozen=True)
class ObjectGeometry:
    center: tuple[float, float]
    footprint: tuple[float, float]
    height: float


@dataclass(frozen=True)
class SceneAnnotations:
    """Per-object positions and sizes ground-truthed by the simulator."""

    room_width: float
    room_depth: float
    room_height: float
    objects: dict[str, ObjectGeometry] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "room": {
                "width": self.room_width,
                "depth": self.room_depth,
                "height": self.room_height,
            },
            "objects": {
                oid: {
                    "center": list(g.center),
                    "footprint": list(g.footprint),
                    "height": g.height,
                }
                for oid, g in sorted(self.objects.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneAnnotations":
        return cls(
            room_width=d["room"]["width"],
            room_depth=d["room"]["depth"],
            room_height=d["room"]["height"],
            objects={
                oid: ObjectGeometry(
                    center=tuple(g["center"]),
                    footprint=tuple(g["footprint"]),
                    height=g["height"],
                )
                for oid, g in d["objects"].items()
            },
        )


@dataclass(frozen=True)
class TaskContext:
    targets: tuple[str, ...]
    candidates: frozenset[str]
    relevant_relations: tuple = ()
    paths: tuple = ()


def match_objects(graph: GlobalSceneGraph, ref: ObjectRef) -> list[str]:
    """All graph object ids matching a reference, id-sorted."""
    return sorted(oid for oid, node in graph.objects.items() if ref.matches(node))


def resolve_targets(
    graph: GlobalSceneGraph, question: StructuredQuestion
) -> list[str]:
    """Resolve each explicit target to exactly one graph object.

    Ambiguity is an error rather than a guess: silently grounding a
    reference to the wrong instance is exactly the failure mode this
    engine exists to catch.
    """
    resolved = []
    for ref in question.explicit_targets:
        matches = match_objects(graph, ref)
        if not matches:
            raise TargetNotFoundError(f"no object matches {ref.display()!r}")
        if len(matches) > 1:
            raise AmbiguousTargetError(
                f"{ref.display()!r} matches several objects: {', '.join(matches)}"
            )
        resolved.append(matches[0])
    return resolved


def expand_candidates(
    graph: GlobalSceneGraph, targets: list[str] | tuple[str, ...], rounds: int
) -> set[str]:
    """Grow the target set by `rounds` layers of graph neighborhoods."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    for t in targets:
        graph.require(t)
    current = set(targets)
    for _ in range(rounds):
        grown = set(current)
        for oid in current:
            grown |= neighborhood(graph, oid)
        if grown == current:
            break
        current = grown
    return current


def _adjacency(graph: GlobalSceneGraph, candidates: set[str] | frozenset[str]):
    """Candidate-restricted adjacency; parallel edges collapse to the
    lexicographically smallest predicate seen from each endpoint."""
    adj: dict[str, dict[str, str]] = {oid: {} for oid in candidates}
    for rel in graph.relations:
        a, b = rel.subject_id, rel.object_id
        if a not in candidates or b not in candidates:
            continue
        fwd, back = rel.predicate, INVERSE_PREDICATE[rel.predicate]
        if b not in adj[a] or fwd < adj[a][b]:
            adj[a][b] = fwd
        if a not in adj[b] or back < adj[b][a]:
            adj[b][a] = back
    return adj


def relation_paths(
    graph: GlobalSceneGraph,
    src: str,
    dst: str,
    candidates: set[str] | frozenset[str],
    max_len: int,
) -> list[tuple]:
    """All simple paths src->dst of at most max_len hops inside candidates.

    A path alternates object ids and predicates, each predicate reported
    from the side it is traversed from.  Shortest paths come first; ties
    break on the lexicographic vertex sequence.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if src not in candidates or dst not in candidates:
        raise ValueError("src and dst must both lie inside the candidate set")
    graph.require(src)
    graph.require(dst)
    if src == dst:
        return [(src,)]

    adj = _adjacency(graph, candidates)
    found: list[tuple] = []

    def walk(path: list, visited: set[str]):
        tail = path[-1]
        hops = len(path) // 2
        if hops >= max_len:
            return
        for nxt in sorted(adj[tail]):
            if nxt in visited:
                continue
            step = path + [adj[tail][nxt], nxt]
            if nxt == dst:
                found.append(tuple(step))
            else:
                walk(step, visited | {nxt})

    walk([src], {src})
    found.sort(key=lambda p: (len(p), p[::2]))
    return found


def build_task_context(
    graph: GlobalSceneGraph,
    question: StructuredQuestion,
    rounds: int = 2,
    max_len: int = 4,
) -> TaskContext:
    """Resolve targets, expand candidates, and gather relevant relations.

    Count questions refer to a whole category, so their reference resolves
    to every matching object rather than erroring on plurality.
    """
    if question.task_type == "object_count":
        targets: list[str] = []
        for ref in question.explicit_targets:
            matches = match_objects(graph, ref)
            if not matches:
                raise TargetNotFoundError(f"no object matches {ref.display()!r}")
            targets.extend(matches)
    else:
        targets = resolve_targets(graph, question)

    candidates = frozenset(expand_candidates(graph, targets, rounds))
    relevant = tuple(
        rel
        for rel in graph.relations
        if rel.subject_id in candidates and rel.object_id in candidates
    )
    paths: list[tuple] = []
    for src in targets:
        for dst in targets:
            if src != dst:
                paths.extend(relation_paths(graph, src, dst, candidates, max_len))
    return TaskContext(
        targets=tuple(targets),
        candidates=candidates,
        relevant_relations=relevant,
        paths=tuple(paths),
    )


def context_to_json(ctx: TaskContext) -> str:
    record = {
        "targets": list(ctx.targets),
        "candidates": sorted(ctx.candidates),
        "relevant_relations": sorted(
            (relation_to_dict(r) for r in ctx.relevant_relations),
            key=lambda d: (
                d["subject_id"],
                d["predicate"],
                d["object_id"],
                d["provenance"].get("frame", -1),
            ),
        ),
        "paths": [list(p) for p in ctx.paths],
    }
    return json.dumps(record, sort_keys=True)


def _letter_for(question: StructuredQuestion, text: str) -> Answer:
    for opt in question.options:
        if opt.text == text:
            return Answer("letter", letter=opt.label)
    raise ValueError(
        f"computed answer {text!r} matches none of the options for "
        f"{question.question_id}"
    )


def _require_annotations(
    question: StructuredQuestion, annotations: SceneAnnotations | None
) -> SceneAnnotations:
    if annotations is None:
        raise MissingAnnotationsError(
            f"{question.task_type} needs simulator geometry; a qualitative "
            "graph cannot yield metric answers"
        )
    return annotations


def _center(annotations: SceneAnnotations, oid: str) -> tuple[float, float]:
    try:
        return annotations.objects[oid].center
    except KeyError:
        raise MissingAnnotationsError(f"no geometry recorded for {oid!r}") from None


def direction_label(
    anchor: tuple[float, float],
    facing: tuple[float, float],
    query: tuple[float, float],
    four_way: bool,
) -> str:
    """Side of the anchor->facing ray the query point falls on.

    Two-way splits at the ray (counterclockwise positive means left);
    four-way uses half-open quadrants of the bearing angle.
    """
    fx, fy = facing[0] - anchor[0], facing[1] - anchor[1]
    qx, qy = query[0] - anchor[0], query[1] - anchor[1]
    if not four_way:
        cross = fx * qy - fy * qx
        return "left" if cross > 0 else "right"
    theta = wrap_pi(math.atan2(qy, qx) - math.atan2(fy, fx))
    if 0 <= theta < math.pi / 2:
        return "front-left"
    if math.pi / 2 <= theta:
        return "back-left"
    if -math.pi / 2 <= theta < 0:
        return "front-right"
    return "back-right"


def answer_from_graph(
    graph: GlobalSceneGraph,
    context: TaskContext,
    question: StructuredQuestion,
    annotations: SceneAnnotations | None = None,
) -> Answer:
    """Deterministic answer for a question over a simulator-grounded graph."""
    task = question.task_type

    if task == "object_count":
        count = len(match_objects(graph, question.explicit_targets[0]))
        return Answer("number", value=float(count))

    if task == "appearance_order":
        nodes = [graph.require(t) for t in context.targets]
        ordered = sorted(nodes, key=lambda n: (n.first_frame, n.id))
        text = ", ".join(n.display_name() for n in ordered)
        return _letter_for(question, text)

    ann = _require_annotations(question, annotations)

    if task == "room_size":
        return Answer("number", value=ann.room_width * ann.room_depth, unit="sq m")

    if task == "object_size":
        geo = ann.objects.get(context.targets[0])
        if geo is None:
            raise MissingAnnotationsError(context.targets[0])
        return Answer(
            "number", value=max(geo.footprint[0], geo.footprint[1], geo.height), unit="m"
        )

    if task == "absolute_distance":
        a = _center(ann, context.targets[0])
        b = _center(ann, context.targets[1])
        return Answer("number", value=math.hypot(b[0] - a[0], b[1] - a[1]), unit="m")

    if task == "relative_distance":
        anchor_id, *candidate_ids = context.targets
        anchor = _center(ann, anchor_id)
        farthest = "farthest" in question.text.lower()
        best = None
        for cid in candidate_ids:
            c = _center(ann, cid)
            d = math.hypot(c[0] - anchor[0], c[1] - anchor[1])
            if best is None or (d > best[0] if farthest else d < best[0]):
                best = (d, cid)
        return _letter_for(question, graph.require(best[1]).display_name())

    if task == "relative_direction":
        anchor_id, facing_id, query_id = context.targets
        label = direction_label(
            _center(ann, anchor_id),
            _center(ann, facing_id),
            _center(ann, query_id),
            four_way=len(question.options) == 4,
        )
        return _letter_for(question, label)

    if task == "route_plan":
        start_id, face_id, goal_id = context.targets
        footprints = {
            oid: (g.center[0], g.center[1], g.footprint[0], g.footprint[1])
            for oid, g in ann.objects.items()
        }
        text = route_instructions(
            ann.room_width, ann.room_depth, footprints, start_id, face_id, goal_id
        )
        if text is None:
            raise ValueError(f"no route between {start_id} and {goal_id}")
        return _letter_for(question, text)

    raise ValueError(f"unhandled task type {task!r}")
