"""Synthetic rooms, egocentric trajectories, and a brute-force oracle.

Everything here is a pure function of (seed, config): rooms with
non-overlapping furniture, discrete camera walks whose consecutive poses
differ by exactly one translation/rotation quantum, per-frame structured
observations, questions for the eight task families, and ground-truth
answers computed directly from scene geometry.  The oracle is the
reference every graph-based answer is checked against.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, replace

from .config import COLORS, MATERIALS, SimulatorConfig
from .geometry import route_instructions, wrap_pi
from .psa import (
    Answer,
    ObjectRef,
    Option,
    OPTION_LABELS,
    ObjectGeometry,
    SceneAnnotations,
    StructuredQuestion,
    TASK_TYPES,
)
from .scene_graph import (
    FrameObservation,
    ObjectNode,
    Provenance,
    SpatialRelation,
    ViewpointTransition,
    node_from_dict,
    node_to_dict,
    relation_from_dict,
    relation_to_dict,
    transition_from_dict,
    transition_to_dict,
)


class SceneGenerationError(RuntimeError):
    pass


class TrajectoryError(RuntimeError):
    pass


class TransitionClassificationError(ValueError):
    pass


class QuestionProvenanceError(ValueError):
    pass


@dataclass(frozen=True)
class PlacedObject:
    id: str
    category: str
    attributes: frozenset[str]
    center: tuple[float, float]
    footprint: tuple[float, float]
    height: float

    def display_name(self) -> str:
        if self.attributes:
            return " ".join(sorted(self.attributes)) + " " + self.category
        return self.category

    def rect(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        w, d = self.footprint
        return (cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2)


def _rects_overlap(a, b) -> bool:
    return (
        a[0] < b[2] - 1e-12
        and a[2] > b[0] + 1e-12
        and a[1] < b[3] - 1e-12
        and a[3] > b[1] + 1e-12
    )


@dataclass(frozen=True)
class Scene:
    width: float
    depth: float
    wall_height: float
    objects: tuple[PlacedObject, ...]
    seed: int

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0:
            raise SceneGenerationError("room must have positive area")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneGenerationError("duplicate object ids in scene")
        for o in self.objects:
            x0, y0, x1, y1 = o.rect()
            if x0 < -1e-9 or y0 < -1e-9 or x1 > self.width + 1e-9 or y1 > self.depth + 1e-9:
                raise SceneGenerationError(f"{o.id} lies outside the room")
        rects = [o.rect() for o in self.objects]
        for i in range(len(rects)):
            for j in range(i + 1, len(rects)):
                if _rects_overlap(rects[i], rects[j]):
                    raise SceneGenerationError(
                        f"{self.objects[i].id} and {self.objects[j].id} overlap"
                    )

    @property
    def area(self) -> float:
        return self.width * self.depth

    def object_by_id(self, oid: str) -> PlacedObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    heading: float  # radians, 0 = +x axis
    fov: float = math.pi / 2
    view_range: float = 4.0

    def __post_init__(self):
        if not (0 < self.fov < math.pi):
            raise ValueError("fov must lie in (0, pi)")
        if self.view_range <= 0:
            raise ValueError("view range must be positive")


# --- scene generation ----------------------------------------------------

def generate_scene(
    seed: int, config: SimulatorConfig, n_objects: int | None = None
) -> Scene:
    """Rejection-sample a room full of non-overlapping furniture."""
    rng = random.Random(f"scene-{seed}")
    width = round(rng.uniform(config.room_min, config.room_max), 2)
    depth = round(rng.uniform(config.room_min, config.room_max), 2)
    if n_objects is None:
        n_objects = rng.randint(config.n_objects_min, config.n_objects_max)
    if n_objects < 1:
        raise SceneGenerationError("need at least one object")

    counters: dict[str, int] = {}
    placed: list[PlacedObject] = []
    for _ in range(n_objects):
        category = rng.choice(config.category_pool)
        attributes = set()
        if rng.random() < 0.75:
            attributes.add(rng.choice(COLORS))
        if rng.random() < 0.40:
            attributes.add(rng.choice(MATERIALS))
        w = round(rng.uniform(0.3, 1.0), 2)
        d = round(rng.uniform(0.3, 1.0), 2)
        h = round(rng.uniform(0.3, 2.0), 2)
        counters[category] = counters.get(category, 0) + 1
        oid = f"{category}#{counters[category]}"

        success = False
        for _ in range(500):
            cx = rng.uniform(w / 2 + 0.05, width - w / 2 - 0.05)
            cy = rng.uniform(d / 2 + 0.05, depth - d / 2 - 0.05)
            candidate = PlacedObject(
                id=oid,
                category=category,
                attributes=frozenset(attributes),
                center=(cx, cy),
                footprint=(w, d),
                height=h,
            )
            pad = (
                candidate.rect()[0] - 0.02,
                candidate.rect()[1] - 0.02,
                candidate.rect()[2] + 0.02,
                candidate.rect()[3] + 0.02,
            )
            if all(not _rects_overlap(pad, other.rect()) for other in placed):
                placed.append(candidate)
                success = True
                break
        if not success:
            raise SceneGenerationError(
                f"could not place {oid} after 500 attempts; "
                "try fewer objects or a larger room"
            )
    return Scene(
        width=width,
        depth=depth,
        wall_height=config.wall_height,
        objects=tuple(placed),
        seed=seed,
    )


# --- camera motion -------------------------------------------------------

_SQ2 = math.sqrt(2.0) / 2.0

BODY_DIRECTIONS = {
    "forward": (1.0, 0.0),
    "backward": (-1.0, 0.0),
    "left": (0.0, 1.0),
    "right": (0.0, -1.0),
    "forward-left": (_SQ2, _SQ2),
    "forward-right": (_SQ2, -_SQ2),
    "backward-left": (-_SQ2, _SQ2),
    "backward-right": (-_SQ2, -_SQ2),
}

_ROTATION_WORD = {"turn-left": "left", "turn-right": "right", "turn-around": "around"}


def transition_narrative(translation: str, rotation: str) -> str:
    if translation == "none" and rotation == "none":
        return "I stay in place."
    parts = []
    if translation != "none":
        parts.append(f"move {translation}")
    if rotation != "none":
        parts.append(f"turn {_ROTATION_WORD[rotation]}")
    return "I " + " and ".join(parts) + "."


def apply_move(
    pose: CameraPose, translation: str, rotation: str, config: SimulatorConfig
) -> CameraPose:
    """One discrete move: translate in the body frame, then rotate."""
    ux, uy = BODY_DIRECTIONS.get(translation, (0.0, 0.0))
    cos_h, sin_h = math.cos(pose.heading), math.sin(pose.heading)
    dx = config.step * (ux * cos_h - uy * sin_h)
    dy = config.step * (ux * sin_h + uy * cos_h)
    dh = {
        "none": 0.0,
        "turn-left": config.turn_quantum,
        "turn-right": -config.turn_quantum,
        "turn-around": math.pi,
    }[rotation]
    return replace(
        pose, x=pose.x + dx, y=pose.y + dy, heading=(pose.heading + dh) % (2 * math.pi)
    )


def apply_transition(
    pose: CameraPose, transition: ViewpointTransition, config: SimulatorConfig
) -> CameraPose:
    return apply_move(pose, transition.translation, transition.rotation, config)


def classify_transition(
    pose_a: CameraPose,
    pose_b: CameraPose,
    config: SimulatorConfig,
    from_frame: int = 0,
) -> ViewpointTransition:
    """Recover the single discrete move separating two trajectory poses."""
    dx, dy = pose_b.x - pose_a.x, pose_b.y - pose_a.y
    cos_h, sin_h = math.cos(pose_a.heading), math.sin(pose_a.heading)
    bx = cos_h * dx + sin_h * dy
    by = -sin_h * dx + cos_h * dy

    translation = None
    if math.hypot(bx, by) < 1e-9:
        translation = "none"
    else:
        for name, (ux, uy) in BODY_DIRECTIONS.items():
            if (
                abs(bx - config.step * ux) < 1e-6
                and abs(by - config.step * uy) < 1e-6
            ):
                translation = name
                break
    if translation is None:
        raise TransitionClassificationError(
            f"displacement ({bx:.4f}, {by:.4f}) is not one translation quantum"
        )

    dh = wrap_pi(pose_b.heading - pose_a.heading)
    if abs(dh) < 1e-9:
        rotation = "none"
    elif abs(dh - config.turn_quantum) < 1e-6:
        rotation = "turn-left"
    elif abs(dh + config.turn_quantum) < 1e-6:
        rotation = "turn-right"
    elif abs(abs(dh) - math.pi) < 1e-6:
        rotation = "turn-around"
    else:
        raise TransitionClassificationError(
            f"heading change {dh:.4f} rad is not one rotation quantum"
        )

    return ViewpointTransition(
        from_frame=from_frame,
        translation=translation,
        rotation=rotation,
        narrative=transition_narrative(translation, rotation),
    )


_MOVE_CHOICES = (
    [("forward", "none")] * 5
    + [("forward-left", "none"), ("forward-right", "none")]
    + [("none", "turn-left"), ("none", "turn-right")] * 2
    + [("forward", "turn-left"), ("forward", "turn-right")]
    + [("left", "none"), ("right", "none"), ("backward", "none")]
    + [("none", "turn-around"), ("none", "none")]
)


def generate_trajectory(
    scene: Scene, seed: int, n_frames: int, config: SimulatorConfig
) -> list[CameraPose]:
    """A discrete random walk that stays inside the room."""
    if n_frames < 1:
        raise TrajectoryError("need at least one frame")
    rng = random.Random(f"trajectory-{scene.seed}-{seed}")
    margin = min(0.3, scene.width / 4, scene.depth / 4)

    # start away from the walls and open with a full panoramic sweep, the
    # way a person scans a new room before walking
    pose = CameraPose(
        x=rng.uniform(scene.width * 0.25, scene.width * 0.75),
        y=rng.uniform(scene.depth * 0.25, scene.depth * 0.75),
        heading=rng.uniform(0.0, 2 * math.pi),
        fov=config.fov,
        view_range=config.view_range,
    )
    poses = [pose]
    sweep_turns = max(int(round(2 * math.pi / config.turn_quantum)) - 1, 0)
    for step in range(n_frames - 1):
        if step < sweep_turns:
            pose = apply_move(pose, "none", "turn-left", config)
            poses.append(pose)
            continue
        choices = list(_MOVE_CHOICES)
        rng.shuffle(choices)
        nxt = None
        for translation, rotation in choices:
            candidate = apply_move(pose, translation, rotation, config)
            if margin <= candidate.x <= scene.width - margin and (
                margin <= candidate.y <= scene.depth - margin
            ):
                nxt = candidate
                break
        if nxt is None:
            # rotations never move the camera, so this is unreachable in a
            # sane room, but the contract demands a loud failure
            raise TrajectoryError("no valid move from the current pose")
        pose = nxt
        poses.append(pose)
    return poses


# --- observation ---------------------------------------------------------

def _bearing(pose: CameraPose, point: tuple[float, float]) -> float:
    """Counterclockwise angle off the view axis; positive = viewer's left."""
    return wrap_pi(math.atan2(point[1] - pose.y, point[0] - pose.x) - pose.heading)


def _visible(obj: PlacedObject, pose: CameraPose) -> bool:
    dist = math.hypot(obj.center[0] - pose.x, obj.center[1] - pose.y)
    if dist > pose.view_range:
        return False
    return abs(_bearing(pose, obj.center)) <= pose.fov / 2


def intra_frame_relations(
    objects: list[PlacedObject] | tuple[PlacedObject, ...],
    pose: CameraPose,
    config: SimulatorConfig,
    frame_index: int = 0,
) -> list[SpatialRelation]:
    """View-relative relations among co-visible objects.

    Left/right orders by bearing (the object further to the viewer's left
    is left-of the other), front/behind by depth along the view axis, near
    by center distance, and above/below by height when footprints overlap
    in plan view (stacked arrangements).
    """
    prov = Provenance("intra", frame_index)
    cos_h, sin_h = math.cos(pose.heading), math.sin(pose.heading)

    def depth(obj):
        return cos_h * (obj.center[0] - pose.x) + sin_h * (obj.center[1] - pose.y)

    rels = []
    ordered = sorted(objects, key=lambda o: o.id)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            ba, bb = _bearing(pose, a.center), _bearing(pose, b.center)
            if ba > bb + 1e-12:
                rels.append(SpatialRelation(a.id, "left-of", b.id, prov))
            elif bb > ba + 1e-12:
                rels.append(SpatialRelation(b.id, "left-of", a.id, prov))
            da, db = depth(a), depth(b)
            if da < db - 1e-12:
                rels.append(SpatialRelation(a.id, "in-front-of", b.id, prov))
            elif db < da - 1e-12:
                rels.append(SpatialRelation(b.id, "in-front-of", a.id, prov))
            gap = math.hypot(
                a.center[0] - b.center[0], a.center[1] - b.center[1]
            )
            if gap <= config.near_threshold:
                rels.append(SpatialRelation(a.id, "near", b.id, prov))
            if _rects_overlap(a.rect(), b.rect()) and a.height != b.height:
                hi, lo = (a, b) if a.height > b.height else (b, a)
                rels.append(SpatialRelation(hi.id, "above", lo.id, prov))
    return rels


def observe(
    scene: Scene, pose: CameraPose, config: SimulatorConfig, frame_index: int = 0
) -> FrameObservation:
    """Structured view of whatever falls inside the camera sector."""
    visible = [o for o in scene.objects if _visible(o, pose)]
    visible.sort(key=lambda o: o.id)
    nodes = tuple(
        ObjectNode(
            id=o.id,
            category=o.category,
            attributes=o.attributes,
            first_frame=frame_index,
            frames=frozenset({frame_index}),
        )
        for o in visible
    )
    relations = tuple(intra_frame_relations(visible, pose, config, frame_index))
    if visible:
        listing = ", ".join(f"a {o.display_name()} ({o.id})" for o in visible)
        description = f"I see {listing}."
    else:
        description = "I see nothing notable."
    return FrameObservation(
        frame_index=frame_index,
        objects=nodes,
        relations=relations,
        description=description,
    )


def observe_trajectory(
    scene: Scene, trajectory: list[CameraPose], config: SimulatorConfig
) -> tuple[list[FrameObservation], list[ViewpointTransition]]:
    observations = [
        observe(scene, pose, config, i) for i, pose in enumerate(trajectory)
    ]
    transitions = [
        classify_transition(a, b, config, from_frame=i)
        for i, (a, b) in enumerate(zip(trajectory, trajectory[1:]))
    ]
    return observations, transitions


def annotations_from_scene(scene: Scene) -> SceneAnnotations:
    return SceneAnnotations(
        room_width=scene.width,
        room_depth=scene.depth,
        room_height=scene.wall_height,
        objects={
            o.id: ObjectGeometry(
                center=o.center, footprint=o.footprint, height=o.height
            )
            for o in scene.objects
        },
    )


# --- question generation and the oracle ----------------------------------

def scene_matches(scene: Scene, ref: ObjectRef) -> list[str]:
    return sorted(
        o.id
        for o in scene.objects
        if o.category == ref.category and ref.attributes <= o.attributes
    )


def _full_ref(obj: PlacedObject) -> ObjectRef:
    return ObjectRef(obj.category, obj.attributes)


def _first_seen(scene: Scene, trajectory: list[CameraPose]) -> dict[str, int]:
    seen: dict[str, int] = {}
    for i, pose in enumerate(trajectory):
        for obj in scene.objects:
            if obj.id not in seen and _visible(obj, pose):
                seen[obj.id] = i
    return seen


def _plural(category: str) -> str:
    if category.endswith(("s", "x", "ch", "sh")):
        return category + "es"
    return category + "s"


def _mk_options(texts: list[str]) -> tuple[Option, ...]:
    return tuple(Option(OPTION_LABELS[i], t) for i, t in enumerate(texts))


def _oracle_direction(anchor, facing, query, four_way: bool) -> str:
    """Quadrant of the query point about the anchor->facing ray.

    Sign-based formulation: positive cross product means the query lies
    counterclockwise of the ray, i.e. to the viewer's left.  Half-open
    boundaries match the angular intervals used by the graph engine;
    boundary-incident layouts are rejected at generation time.
    """
    fx, fy = facing[0] - anchor[0], facing[1] - anchor[1]
    qx, qy = query[0] - anchor[0], query[1] - anchor[1]
    cross = fx * qy - fy * qx
    dot = fx * qx + fy * qy
    if not four_way:
        return "left" if cross > 0 else "right"
    if cross > 0:
        return "front-left" if dot > 0 else "back-left"
    if cross < 0:
        return "front-right" if dot >= 0 else "back-right"
    return "front-left" if dot > 0 else "back-left"


def _direction_margin(anchor, facing, query) -> float:
    """Angular distance from the nearest quadrant boundary."""
    fx, fy = facing[0] - anchor[0], facing[1] - anchor[1]
    qx, qy = query[0] - anchor[0], query[1] - anchor[1]
    theta = wrap_pi(math.atan2(qy, qx) - math.atan2(fy, fx))
    return min(
        abs(theta - b) for b in (-math.pi, -math.pi / 2, 0.0, math.pi / 2, math.pi)
    )


def _scene_footprints(scene: Scene) -> dict[str, tuple[float, float, float, float]]:
    return {
        o.id: (o.center[0], o.center[1], o.footprint[0], o.footprint[1])
        for o in scene.objects
    }


def _route_distractors(truth: str, rng: random.Random) -> list[str]:
    def swap(text: str) -> str:
        return (
            text.replace("turn left", "TMP")
            .replace("turn right", "turn left")
            .replace("TMP", "turn right")
        )

    pool = [swap(truth)]
    clauses = truth[:-1].split(", ")
    turn_idx = [i for i, c in enumerate(clauses) if c.lower().startswith("turn")]
    if turn_idx:
        dropped = [c for i, c in enumerate(clauses) if i != turn_idx[0]]
        text = ", ".join(dropped)
        pool.append(text[0].upper() + text[1:] + ".")
    for extra in ("turn left", "turn right", "turn around"):
        pool.append(extra[0].upper() + extra[1:] + ", " + truth[0].lower() + truth[1:])
    seen, distractors = {truth}, []
    for cand in pool:
        if cand not in seen:
            seen.add(cand)
            distractors.append(cand)
    rng.shuffle(distractors)
    return distractors[:3]


def generate_questions(
    scene: Scene,
    trajectory: list[CameraPose],
    families,
    seed: int,
    config: SimulatorConfig,
) -> tuple[list[StructuredQuestion], dict[str, str]]:
    """One question per requested family, skipping infeasible families.

    Every referenced object is observed during the trajectory and is
    uniquely identifiable by its category+attributes, so graph-side target
    resolution cannot be ambiguous.  Metric comparisons carry a margin and
    direction questions reject boundary-incident layouts, keeping oracle
    answers stable under floating-point noise.
    """
    rng = random.Random(f"questions-{scene.seed}-{seed}")
    first_seen = _first_seen(scene, trajectory)
    unique_observed = sorted(
        o.id
        for o in scene.objects
        if o.id in first_seen and scene_matches(scene, _full_ref(o)) == [o.id]
    )

    questions: list[StructuredQuestion] = []
    skipped: dict[str, str] = {}
    counter = 0

    def qid(family: str) -> str:
        nonlocal counter
        counter += 1
        return f"scene-{scene.seed:05d}-{family}-{counter}"

    def add(question: StructuredQuestion):
        truth = oracle_answer(scene, trajectory, question, config)
        questions.append(replace(question, ground_truth=truth))

    for family in sorted(set(families), key=TASK_TYPES.index):
        if family == "room_size":
            add(
                StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text="What is the area of the room in square meters?",
                    explicit_targets=(),
                )
            )
            continue

        if family == "object_count":
            per_category: dict[str, int] = {}
            observed_per_category: dict[str, int] = {}
            for o in scene.objects:
                per_category[o.category] = per_category.get(o.category, 0) + 1
                if o.id in first_seen:
                    observed_per_category[o.category] = (
                        observed_per_category.get(o.category, 0) + 1
                    )
            fully_observed = sorted(
                c
                for c, n in per_category.items()
                if observed_per_category.get(c, 0) == n
            )
            if not fully_observed:
                skipped[family] = "no category was fully observed"
                continue
            plural_cats = [c for c in fully_observed if per_category[c] > 1]
            category = rng.choice(plural_cats or fully_observed)
            add(
                StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text=f"How many {_plural(category)} are in the room?",
                    explicit_targets=(ObjectRef(category),),
                )
            )
            continue

        if family == "object_size":
            if not unique_observed:
                skipped[family] = "no uniquely identifiable object was observed"
                continue
            target = scene.object_by_id(rng.choice(unique_observed))
            add(
                StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text=(
                        f"What is the size of the {target.display_name()} in "
                        "meters (longest dimension)?"
                    ),
                    explicit_targets=(_full_ref(target),),
                )
            )
            continue

        if family == "absolute_distance":
            if len(unique_observed) < 2:
                skipped[family] = "needs two uniquely identifiable objects"
                continue
            a, b = (
                scene.object_by_id(i) for i in rng.sample(unique_observed, 2)
            )
            add(
                StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text=(
                        f"What is the distance in meters between the "
                        f"{a.display_name()} and the {b.display_name()}?"
                    ),
                    explicit_targets=(_full_ref(a), _full_ref(b)),
                )
            )
            continue

        if family == "relative_distance":
            if len(unique_observed) < 3:
                skipped[family] = "needs an anchor and at least two candidates"
                continue
            question = None
            for _ in range(50):
                k = min(4, len(unique_observed) - 1)
                picks = rng.sample(unique_observed, k + 1)
                anchor = scene.object_by_id(picks[0])
                candidates = [scene.object_by_id(i) for i in picks[1:]]
                dists = sorted(
                    math.hypot(
                        c.center[0] - anchor.center[0],
                        c.center[1] - anchor.center[1],
                    )
                    for c in candidates
                )
                if dists[1] - dists[0] < 1e-6 or dists[-1] - dists[-2] < 1e-6:
                    continue
                variant = rng.choice(("closest", "farthest"))
                displays = [c.display_name() for c in candidates]
                question = StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text=(
                        f"Which of these objects is the {variant} to the "
                        f"{anchor.display_name()}: {', '.join(displays)}?"
                    ),
                    explicit_targets=tuple(
                        [_full_ref(anchor)] + [_full_ref(c) for c in candidates]
                    ),
                    options=_mk_options(displays),
                )
                break
            if question is None:
                skipped[family] = "no candidate set with a clear margin"
                continue
            add(question)
            continue

        if family == "relative_direction":
            if len(unique_observed) < 3:
                skipped[family] = "needs three uniquely identifiable objects"
                continue
            question = None
            for _ in range(50):
                a_id, b_id, c_id = rng.sample(unique_observed, 3)
                a = scene.object_by_id(a_id)
                b = scene.object_by_id(b_id)
                c = scene.object_by_id(c_id)
                if _direction_margin(a.center, b.center, c.center) < 1e-6:
                    continue
                four_way = rng.random() < 0.5
                labels = (
                    ["front-left", "front-right", "back-left", "back-right"]
                    if four_way
                    else ["left", "right"]
                )
                rng.shuffle(labels)
                question = StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text=(
                        f"You are standing at the {a.display_name()} and facing "
                        f"the {b.display_name()}. In which direction is the "
                        f"{c.display_name()}?"
                    ),
                    explicit_targets=(_full_ref(a), _full_ref(b), _full_ref(c)),
                    options=_mk_options(labels),
                )
                break
            if question is None:
                skipped[family] = "no boundary-safe object triple"
                continue
            add(question)
            continue

        if family == "route_plan":
            if len(unique_observed) < 3:
                skipped[family] = "needs three uniquely identifiable objects"
                continue
            question = None
            for _ in range(50):
                s_id, f_id, g_id = rng.sample(unique_observed, 3)
                s = scene.object_by_id(s_id)
                f = scene.object_by_id(f_id)
                g = scene.object_by_id(g_id)
                fx = f.center[0] - s.center[0]
                fy = f.center[1] - s.center[1]
                # reject facing vectors near a diagonal, where axis snapping
                # would be unstable
                if abs(abs(fx) - abs(fy)) < 1e-6:
                    continue
                truth = route_instructions(
                    scene.width,
                    scene.depth,
                    _scene_footprints(scene),
                    s_id,
                    f_id,
                    g_id,
                    cell=config.grid_cell,
                )
                if truth is None or truth == "Stay where you are.":
                    continue
                distractors = _route_distractors(truth, rng)
                if not distractors:
                    continue
                texts = [truth] + distractors
                rng.shuffle(texts)
                question = StructuredQuestion(
                    question_id=qid(family),
                    task_type=family,
                    text=(
                        f"You are at the {s.display_name()} facing the "
                        f"{f.display_name()}. How do you get to the "
                        f"{g.display_name()}?"
                    ),
                    explicit_targets=(_full_ref(s), _full_ref(f), _full_ref(g)),
                    options=_mk_options(texts),
                )
                break
            if question is None:
                skipped[family] = "no routable object triple"
                continue
            add(question)
            continue

        if family == "appearance_order":
            # prefer objects with unshared first-visible frames; shared
            # frames are legal (ties break by id on both answer routes)
            eligible = sorted(
                oid
                for oid in unique_observed
                if sum(
                    1 for x in unique_observed if first_seen[x] == first_seen[oid]
                )
                == 1
            )
            if len(eligible) < 2:
                eligible = list(unique_observed)
            if len(eligible) < 2:
                skipped[family] = "needs two uniquely identifiable objects"
                continue
            k = min(3, len(eligible))
            picks = [scene.object_by_id(i) for i in rng.sample(eligible, k)]
            listed = sorted(o.display_name() for o in picks)
            correct = ", ".join(
                o.display_name()
                for o in sorted(picks, key=lambda o: (first_seen[o.id], o.id))
            )
            perms = []
            for perm in itertools.permutations(sorted(picks, key=lambda o: o.id)):
                text = ", ".join(o.display_name() for o in perm)
                if text != correct:
                    perms.append(text)
            distractors = rng.sample(perms, min(3, len(perms)))
            texts = [correct] + distractors
            rng.shuffle(texts)
            ref_order = sorted(picks, key=lambda o: o.display_name())
            question = StructuredQuestion(
                question_id=qid(family),
                task_type=family,
                text=(
                    "In what order do these objects first appear: "
                    f"{', '.join(listed)}?"
                ),
                explicit_targets=tuple(_full_ref(o) for o in ref_order),
                options=_mk_options(texts),
            )
            add(question)
            continue

        skipped[family] = "unknown family"

    return questions, skipped


def _resolve_unique(scene: Scene, ref: ObjectRef) -> PlacedObject:
    ids = scene_matches(scene, ref)
    if len(ids) != 1:
        raise QuestionProvenanceError(
            f"reference {ref.display()!r} matches {len(ids)} scene objects"
        )
    return scene.object_by_id(ids[0])


def _option_letter(question: StructuredQuestion, text: str) -> Answer:
    for opt in question.options:
        if opt.text == text:
            return Answer("letter", letter=opt.label)
    raise QuestionProvenanceError(
        f"computed answer {text!r} not among the options of {question.question_id}"
    )


def oracle_answer(
    scene: Scene,
    trajectory: list[CameraPose],
    question: StructuredQuestion,
    config: SimulatorConfig,
) -> Answer:
    """Brute-force ground truth straight from scene geometry."""
    task = question.task_type

    if task == "room_size":
        return Answer("number", value=scene.area, unit="sq m")

    if task == "object_count":
        ref = question.explicit_targets[0]
        count = len(scene_matches(scene, ref))
        if count == 0:
            raise QuestionProvenanceError(
                f"no scene object matches {ref.display()!r}"
            )
        return Answer("number", value=float(count))

    targets = [_resolve_unique(scene, ref) for ref in question.explicit_targets]

    if task == "object_size":
        o = targets[0]
        return Answer(
            "number", value=max(o.footprint[0], o.footprint[1], o.height), unit="m"
        )

    if task == "absolute_distance":
        a, b = targets[0], targets[1]
        return Answer(
            "number",
            value=math.hypot(
                b.center[0] - a.center[0], b.center[1] - a.center[1]
            ),
            unit="m",
        )

    if task == "relative_distance":
        anchor, candidates = targets[0], targets[1:]
        farthest = "farthest" in question.text.lower()
        scored = [
            (
                math.hypot(
                    c.center[0] - anchor.center[0], c.center[1] - anchor.center[1]
                ),
                c,
            )
            for c in candidates
        ]
        winner = max(scored, key=lambda t: t[0]) if farthest else min(
            scored, key=lambda t: t[0]
        )
        return _option_letter(question, winner[1].display_name())

    if task == "relative_direction":
        a, b, c = targets[0], targets[1], targets[2]
        label = _oracle_direction(
            a.center, b.center, c.center, four_way=len(question.options) == 4
        )
        return _option_letter(question, label)

    if task == "route_plan":
        s, f, g = targets[0], targets[1], targets[2]
        text = route_instructions(
            scene.width,
            scene.depth,
            _scene_footprints(scene),
            s.id,
            f.id,
            g.id,
            cell=config.grid_cell,
        )
        if text is None:
            raise QuestionProvenanceError(
                f"no route exists for {question.question_id}"
            )
        return _option_letter(question, text)

    if task == "appearance_order":
        first_seen = _first_seen(scene, trajectory)
        for o in targets:
            if o.id not in first_seen:
                raise QuestionProvenanceError(f"{o.id} is never observed")
        ordered = sorted(targets, key=lambda o: (first_seen[o.id], o.id))
        return _option_letter(
            question, ", ".join(o.display_name() for o in ordered)
        )

    raise QuestionProvenanceError(f"unknown task type {task!r}")


# --- dataset export -------------------------------------------------------

def scene_to_record(scene: Scene) -> dict:
    return {
        "seed": scene.seed,
        "room": {
            "width": scene.width,
            "depth": scene.depth,
            "height": scene.wall_height,
        },
        "objects": [
            {
                "id": o.id,
                "category": o.category,
                "attributes": sorted(o.attributes),
                "center": list(o.center),
                "footprint": list(o.footprint),
                "height": o.height,
            }
            for o in scene.objects
        ],
    }


def scene_from_record(d: dict) -> Scene:
    return Scene(
        width=d["room"]["width"],
        depth=d["room"]["depth"],
        wall_height=d["room"]["height"],
        seed=d["seed"],
        objects=tuple(
            PlacedObject(
                id=o["id"],
                category=o["category"],
                attributes=frozenset(o["attributes"]),
                center=tuple(o["center"]),
                footprint=tuple(o["footprint"]),
                height=o["height"],
            )
            for o in d["objects"]
        ),
    )


def build_dataset_record(
    scene_seed: int,
    config: SimulatorConfig,
    families=TASK_TYPES,
    n_objects: int | None = None,
) -> dict:
    """Scene + trajectory + observations + questions as one JSON record."""
    scene = generate_scene(scene_seed, config, n_objects=n_objects)
    trajectory = generate_trajectory(scene, scene_seed, config.frames, config)
    observations, transitions = observe_trajectory(scene, trajectory, config)
    questions, skipped = generate_questions(
        scene, trajectory, families, scene_seed, config
    )
    return {
        "scene_id": f"scene-{scene_seed:05d}",
        "scene": scene_to_record(scene),
        "trajectory": [
            {"x": p.x, "y": p.y, "heading": p.heading} for p in trajectory
        ],
        "observations": [
            {
                "frame_index": obs.frame_index,
                "objects": [node_to_dict(n) for n in obs.objects],
                "relations": [relation_to_dict(r) for r in obs.relations],
                "description": obs.description,
            }
            for obs in observations
        ],
        "transitions": [transition_to_dict(t) for t in transitions],
        "questions": [q.to_dict() for q in questions],
        "annotations": annotations_from_scene(scene).to_dict(),
        "skipped_families": skipped,
    }


def dataset_record_observations(record: dict):
    observations = [
        FrameObservation(
            frame_index=o["frame_index"],
            objects=tuple(node_from_dict(n) for n in o["objects"]),
            relations=tuple(relation_from_dict(r) for r in o["relations"]),
            description=o["description"],
        )
        for o in record["observations"]
    ]
    transitions = [transition_from_dict(t) for t in record["transitions"]]
    return observations, transitions


def write_dataset(path, seed: int, n_scenes: int, config: SimulatorConfig) -> int:
    """Write one JSON-Lines record per scene; returns the question count."""
    n_questions = 0
    with open(path, "w", encoding="utf-8") as fh:
        for k in range(n_scenes):
            record = build_dataset_record(seed + k, config)
            n_questions += len(record["questions"])
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return n_questions
