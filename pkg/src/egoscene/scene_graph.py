"""Cross-frame scene graphs built from per-frame observations.

Each frame yields a set of observed objects and intra-frame spatial
relations.  Merging a contiguous frame sequence produces a single global
graph whose nodes are identity-resolved objects, whose edges keep their
per-frame provenance, and whose viewpoint transitions record how the
observer moved between consecutive frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

PREDICATES = (
    "left-of",
    "right-of",
    "in-front-of",
    "behind",
    "above",
    "below",
    "near",
    "far-from",
    "on",
    "inside",
)

# Total over the vocabulary.  "on" and "inside" have no exact converse in
# the closed predicate set, so they map to truth-preserving weakenings:
# the supporter sits below its load; a container is co-located with its
# content.
INVERSE_PREDICATE = {
    "left-of": "right-of",
    "right-of": "left-of",
    "in-front-of": "behind",
    "behind": "in-front-of",
    "above": "below",
    "below": "above",
    "near": "near",
    "far-from": "far-from",
    "on": "below",
    "inside": "near",
}

TRANSLATIONS = (
    "none",
    "forward",
    "backward",
    "left",
    "right",
    "forward-left",
    "forward-right",
    "backward-left",
    "backward-right",
)

ROTATIONS = ("none", "turn-left", "turn-right", "turn-around")


class GraphStructureError(ValueError):
    """Observation stream or relation set violates graph structure rules."""


class UnknownObjectError(KeyError):
    """An object id was queried that is not present in the graph."""


@dataclass(frozen=True)
class ObjectNode:
    id: str
    category: str
    attributes: frozenset[str] = frozenset()
    first_frame: int = 0
    frames: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.frames and self.first_frame != min(self.frames):
            raise GraphStructureError(
                f"object {self.id!r}: first_frame {self.first_frame} != min(frames)"
            )

    @property
    def signature(self) -> tuple[str, frozenset[str]]:
        return (self.category, self.attributes)

    def display_name(self) -> str:
        if self.attributes:
            return " ".join(sorted(self.attributes)) + " " + self.category
        return self.category


@dataclass(frozen=True)
class Provenance:
    kind: str  # "intra" or "inter"
    frame: int | None = None

    def __post_init__(self):
        if self.kind not in ("intra", "inter"):
            raise GraphStructureError(f"bad provenance kind {self.kind!r}")
        if self.kind == "intra" and self.frame is None:
            raise GraphStructureError("intra-frame provenance needs a frame index")


@dataclass(frozen=True)
class SpatialRelation:
    subject_id: str
    predicate: str
    object_id: str
    provenance: Provenance = Provenance("inter")

    def __post_init__(self):
        if self.subject_id == self.object_id:
            raise GraphStructureError(
                f"relation subject and object are both {self.subject_id!r}"
            )
        if self.predicate not in INVERSE_PREDICATE:
            raise GraphStructureError(f"unknown predicate {self.predicate!r}")

    def inverted(self) -> "SpatialRelation":
        """The same stored fact reported from the object's perspective."""
        return replace(
            self,
            subject_id=self.object_id,
            predicate=INVERSE_PREDICATE[self.predicate],
            object_id=self.subject_id,
        )


@dataclass(frozen=True)
class ViewpointTransition:
    from_frame: int
    translation: str
    rotation: str
    narrative: str = ""

    def __post_init__(self):
        if self.translation not in TRANSLATIONS:
            raise GraphStructureError(f"unknown translation {self.translation!r}")
        if self.rotation not in ROTATIONS:
            raise GraphStructureError(f"unknown rotation {self.rotation!r}")
        if (self.translation, self.rotation) != ("none", "none") and not self.narrative:
            raise GraphStructureError(
                "a moving transition must carry a narrative description"
            )

    @property
    def to_frame(self) -> int:
        return self.from_frame + 1


@dataclass(frozen=True)
class FrameObservation:
    frame_index: int
    objects: tuple[ObjectNode, ...]
    relations: tuple[SpatialRelation, ...] = ()
    description: str = ""

    def __post_init__(self):
        if self.frame_index < 0:
            raise GraphStructureError(f"negative frame index {self.frame_index}")
        ids = {o.id for o in self.objects}
        if len(ids) != len(self.objects):
            raise GraphStructureError(
                f"frame {self.frame_index}: duplicate object ids"
            )
        for rel in self.relations:
            if rel.subject_id not in ids or rel.object_id not in ids:
                raise GraphStructureError(
                    f"frame {self.frame_index}: relation "
                    f"({rel.subject_id} {rel.predicate} {rel.object_id}) "
                    "references an object not observed this frame"
                )


@dataclass(frozen=True)
class GlobalSceneGraph:
    objects: dict[str, ObjectNode]
    relations: tuple[SpatialRelation, ...]
    transitions: tuple[ViewpointTransition, ...]
    frame_count: int

    def __post_init__(self):
        expected = max(self.frame_count - 1, 0)
        if len(self.transitions) != expected:
            raise GraphStructureError(
                f"{len(self.transitions)} transitions for {self.frame_count} frames"
            )
        for rel in self.relations:
            if rel.subject_id not in self.objects or rel.object_id not in self.objects:
                raise GraphStructureError(
                    f"relation endpoint missing from graph: "
                    f"({rel.subject_id} {rel.predicate} {rel.object_id})"
                )
        for node in self.objects.values():
            if node.frames and not all(0 <= f < self.frame_count for f in node.frames):
                raise GraphStructureError(
                    f"object {node.id!r} observed outside frame range"
                )

    def require(self, object_id: str) -> ObjectNode:
        try:
            return self.objects[object_id]
        except KeyError:
            raise UnknownObjectError(object_id) from None


def _resolve_identities(
    observations: list[FrameObservation] | tuple[FrameObservation, ...],
    by_id: bool,
) -> dict[tuple[int, str], str]:
    """Map (frame_index, observed id) -> resolved global id.

    Signature resolution merges observations whose (category, attributes)
    match exactly, but only when no frame ever shows two instances of that
    signature; an in-frame duplicate means linguistic identity cannot be
    established, so every instance of that signature stays distinct.
    """
    if by_id:
        return {
            (obs.frame_index, o.id): o.id for obs in observations for o in obs.objects
        }

    per_frame_counts: dict[tuple, int] = {}
    ambiguous: set[tuple] = set()
    for obs in observations:
        counts: dict[tuple, int] = {}
        for o in obs.objects:
            counts[o.signature] = counts.get(o.signature, 0) + 1
        for sig, n in counts.items():
            if n > 1:
                ambiguous.add(sig)

    mapping: dict[tuple[int, str], str] = {}
    canonical: dict[tuple, str] = {}
    for obs in observations:
        for o in obs.objects:
            if o.signature in ambiguous:
                resolved = o.id
            else:
                resolved = canonical.setdefault(o.signature, o.id)
            mapping[(obs.frame_index, o.id)] = resolved
    return mapping


def merge_observations(
    observations: list[FrameObservation] | tuple[FrameObservation, ...],
    transitions: list[ViewpointTransition] | tuple[ViewpointTransition, ...],
    by_id: bool = False,
) -> GlobalSceneGraph:
    """Merge per-frame observations into one identity-resolved global graph.

    ``by_id=True`` trusts observed object ids as stable across frames (the
    simulator emits ground-truth ids); the default resolves identity by
    exact category+attribute match.  Relations are rewritten onto resolved
    ids, so an anchor object seen in several frames links those frames'
    relation sets through its single node.
    """
    observations = list(observations)
    transitions = tuple(transitions)
    for i, obs in enumerate(observations):
        if obs.frame_index != i:
            raise GraphStructureError(
                f"observations must be contiguous from frame 0; "
                f"position {i} has frame_index {obs.frame_index}"
            )
    expected = max(len(observations) - 1, 0)
    if len(transitions) != expected:
        raise GraphStructureError(
            f"{len(transitions)} transitions for {len(observations)} observations"
        )
    for i, tr in enumerate(transitions):
        if tr.from_frame != i:
            raise GraphStructureError(
                f"transition {i} covers frames {tr.from_frame}->{tr.to_frame}, "
                f"expected {i}->{i + 1}"
            )

    mapping = _resolve_identities(observations, by_id)

    nodes: dict[str, ObjectNode] = {}
    frames_seen: dict[str, set[int]] = {}
    for obs in observations:
        for o in obs.objects:
            rid = mapping[(obs.frame_index, o.id)]
            frames_seen.setdefault(rid, set()).add(obs.frame_index)
            if rid not in nodes:
                nodes[rid] = o if o.id == rid else replace(o, id=rid)
    resolved_nodes = {
        rid: replace(
            node,
            first_frame=min(frames_seen[rid]),
            frames=frozenset(frames_seen[rid]),
        )
        for rid, node in nodes.items()
    }

    relations = []
    for obs in observations:
        for rel in obs.relations:
            relations.append(
                SpatialRelation(
                    subject_id=mapping[(obs.frame_index, rel.subject_id)],
                    predicate=rel.predicate,
                    object_id=mapping[(obs.frame_index, rel.object_id)],
                    provenance=Provenance("intra", obs.frame_index),
                )
            )

    return GlobalSceneGraph(
        objects=resolved_nodes,
        relations=tuple(relations),
        transitions=transitions,
        frame_count=len(observations),
    )


def neighborhood(graph: GlobalSceneGraph, object_id: str) -> set[str]:
    """Ids related to ``object_id`` by any stored relation, either direction."""
    graph.require(object_id)
    out: set[str] = set()
    for rel in graph.relations:
        if rel.subject_id == object_id:
            out.add(rel.object_id)
        elif rel.object_id == object_id:
            out.add(rel.subject_id)
    return out


def relations_between(graph: GlobalSceneGraph, a: str, b: str) -> list[SpatialRelation]:
    """All stored relations between ``a`` and ``b``, reported from a's side."""
    graph.require(a)
    graph.require(b)
    out = []
    for rel in graph.relations:
        if rel.subject_id == a and rel.object_id == b:
            out.append(rel)
        elif rel.subject_id == b and rel.object_id == a:
            out.append(rel.inverted())
    return out


def decompose(graph: GlobalSceneGraph) -> list[FrameObservation]:
    """Split a graph back into its per-frame observation stream."""
    frames = []
    for f in range(graph.frame_count):
        objs = tuple(
            node for _, node in sorted(graph.objects.items()) if f in node.frames
        )
        rels = tuple(
            rel
            for rel in graph.relations
            if rel.provenance.kind == "intra" and rel.provenance.frame == f
        )
        frames.append(FrameObservation(frame_index=f, objects=objs, relations=rels))
    return frames


def normalize_narrative(
    graph: GlobalSceneGraph,
    observations: list[FrameObservation] | tuple[FrameObservation, ...],
    by_id: bool = False,
) -> list[str]:
    """Per-frame descriptions with first-occurrence object introductions.

    An object gets its full attribute description in the frame where it is
    first observed; later frames refer to it by stable id only, so the
    narrative stays coherent without re-describing known anchors.
    """
    observations = list(observations)
    mapping = _resolve_identities(observations, by_id)
    for key, rid in mapping.items():
        if rid not in graph.objects:
            raise GraphStructureError(
                f"graph was not built from these observations (missing {rid!r})"
            )

    def ref(rid: str) -> str:
        node = graph.objects[rid]
        return f"the {node.category} ({node.id})"

    introduced: set[str] = set()
    texts = []
    for obs in observations:
        sentences = []
        for o in obs.objects:
            rid = mapping[(obs.frame_index, o.id)]
            node = graph.objects[rid]
            if rid not in introduced:
                introduced.add(rid)
                article = "an" if node.category[:1] in "aeiou" else "a"
                if node.attributes:
                    desc = " ".join(sorted(node.attributes)) + " " + node.category
                    article = "an" if desc[:1] in "aeiou" else "a"
                else:
                    desc = node.category
                sentences.append(f"I see {article} {desc} ({node.id}).")
            else:
                sentences.append(f"The {node.category} ({node.id}) is in view again.")
        for rel in obs.relations:
            s = mapping[(obs.frame_index, rel.subject_id)]
            o = mapping[(obs.frame_index, rel.object_id)]
            sentences.append(f"{ref(s).capitalize()} is {rel.predicate} {ref(o)}.")
        texts.append(" ".join(sentences) if sentences else "I see nothing notable.")
    return texts


# --- serialization -----------------------------------------------------

def node_to_dict(node: ObjectNode) -> dict:
    return {
        "id": node.id,
        "category": node.category,
        "attributes": sorted(node.attributes),
        "first_frame": node.first_frame,
        "frames": sorted(node.frames),
    }


def relation_to_dict(rel: SpatialRelation) -> dict:
    prov: dict = {"kind": rel.provenance.kind}
    if rel.provenance.frame is not None:
        prov["frame"] = rel.provenance.frame
    return {
        "subject_id": rel.subject_id,
        "predicate": rel.predicate,
        "object_id": rel.object_id,
        "provenance": prov,
    }


def transition_to_dict(tr: ViewpointTransition) -> dict:
    return {
        "from_frame": tr.from_frame,
        "to_frame": tr.to_frame,
        "translation": tr.translation,
        "rotation": tr.rotation,
        "narrative": tr.narrative,
    }


def graph_to_record(graph: GlobalSceneGraph) -> dict:
    return {
        "objects": [node_to_dict(n) for _, n in sorted(graph.objects.items())],
        "relations": [relation_to_dict(r) for r in graph.relations],
        "transitions": [transition_to_dict(t) for t in graph.transitions],
        "frame_count": graph.frame_count,
    }


def node_from_dict(d: dict) -> ObjectNode:
    return ObjectNode(
        id=d["id"],
        category=d["category"],
        attributes=frozenset(d.get("attributes", ())),
        first_frame=d["first_frame"],
        frames=frozenset(d["frames"]),
    )


def relation_from_dict(d: dict) -> SpatialRelation:
    prov = d.get("provenance", {"kind": "inter"})
    return SpatialRelation(
        subject_id=d["subject_id"],
        predicate=d["predicate"],
        object_id=d["object_id"],
        provenance=Provenance(prov["kind"], prov.get("frame")),
    )


def transition_from_dict(d: dict) -> ViewpointTransition:
    return ViewpointTransition(
        from_frame=d["from_frame"],
        translation=d["translation"],
        rotation=d["rotation"],
        narrative=d.get("narrative", ""),
    )


def graph_from_record(d: dict) -> GlobalSceneGraph:
    return GlobalSceneGraph(
        objects={n["id"]: node_from_dict(n) for n in d["objects"]},
        relations=tuple(relation_from_dict(r) for r in d["relations"]),
        transitions=tuple(transition_from_dict(t) for t in d["transitions"]),
        frame_count=d["frame_count"],
    )


def graph_to_json(graph: GlobalSceneGraph) -> str:
    return json.dumps(graph_to_record(graph), sort_keys=True)


def graph_from_json(line: str) -> GlobalSceneGraph:
    return graph_from_record(json.loads(line))
