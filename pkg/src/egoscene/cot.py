"""Structured chain-of-thought format: grammar, parser, renderer, reward.

Grammar (canonical form, marker strings configurable)::

    document   = "<think>" summary rpc psa reasoning "</think>" ws
                 "<answer>" answer "</answer>"
    summary    = "## Summary" text
    rpc        = "## Role-Play Caption" frame (transition frame)*
    psa        = "## Progressive Spatial Analysis" targets candidates relations
    reasoning  = "## Reasoning" text
    frame      = "[Frame N]" text
    transition = "[Transition N->M]" text
    targets    = "Targets:" comma-list
    candidates = "Candidates:" comma-list
    relations  = "Relations:" ("- " statement)*

Section headers match case-insensitively with surrounding whitespace
ignored; content is preserved verbatim modulo whitespace normalization.
The binary format reward checks the tag-and-section level only; deeper
structural problems (broken block alternation, targets outside the
candidate list) are normalized and reported as warnings, not zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


class CoTParseError(ValueError):
    """Base class; `location` is a character offset into the input."""

    def __init__(self, message: str, location: int = 0):
        super().__init__(f"{message} (at offset {location})")
        self.location = location


class TagError(CoTParseError):
    pass


class SectionError(CoTParseError):
    pass


class OrderError(CoTParseError):
    pass


class AnswerError(CoTParseError):
    pass


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class CotMarkers:
    think_open: str = "<think>"
    think_close: str = "</think>"
    answer_open: str = "<answer>"
    answer_close: str = "</answer>"
    summary: str = "## Summary"
    rpc: str = "## Role-Play Caption"
    psa: str = "## Progressive Spatial Analysis"
    reasoning: str = "## Reasoning"
    frame_prefix: str = "[Frame"
    transition_prefix: str = "[Transition"
    lenient: bool = False

    def section_markers(self) -> tuple[tuple[str, str], ...]:
        return (
            ("Summary", self.summary),
            ("Role-Play Caption", self.rpc),
            ("Progressive Spatial Analysis", self.psa),
            ("Reasoning", self.reasoning),
        )


DEFAULT_MARKERS = CotMarkers()


def _norm(text: str) -> str:
    return "\n".join(line.rstrip() for line in text.splitlines()).strip()


@dataclass(frozen=True)
class PsaSection:
    targets: tuple[str, ...] = ()
    candidates: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()

    def __post_init__(self):
        clean = lambda items: tuple(t.strip() for t in items if t.strip())
        object.__setattr__(self, "targets", clean(self.targets))
        object.__setattr__(self, "candidates", clean(self.candidates))
        object.__setattr__(
            self, "relations", tuple(_norm(r) for r in self.relations if _norm(r))
        )


@dataclass(frozen=True)
class CoTDocument:
    """Four reasoning fields plus the final answer.

    ``rpc_narrative`` alternates frame and transition blocks by position
    (even indices are frames), so it must have odd length.  Construction
    normalizes whitespace but does not enforce the structural invariants;
    ``render`` refuses documents that violate them.
    """

    summary: str
    rpc_narrative: tuple[str, ...]
    psa_section: PsaSection
    reasoning: str
    answer: str

    def __post_init__(self):
        object.__setattr__(self, "summary", _norm(self.summary))
        object.__setattr__(
            self, "rpc_narrative", tuple(_norm(b) for b in self.rpc_narrative)
        )
        object.__setattr__(self, "reasoning", _norm(self.reasoning))
        object.__setattr__(self, "answer", self.answer.strip())

    def invariant_violations(self) -> list[str]:
        problems = []
        if not self.summary:
            problems.append("summary is empty")
        if not self.reasoning:
            problems.append("reasoning is empty")
        if not self.answer:
            problems.append("answer is empty")
        if len(self.rpc_narrative) % 2 == 0 or not self.rpc_narrative:
            problems.append(
                "narrative must alternate frame/transition blocks and "
                "start and end with a frame block (odd length >= 1)"
            )
        if not set(self.psa_section.targets) <= set(self.psa_section.candidates):
            missing = set(self.psa_section.targets) - set(self.psa_section.candidates)
            problems.append(f"targets not in candidate list: {sorted(missing)}")
        return problems


def _find_single(text: str, needle: str) -> int:
    first = text.find(needle)
    if first < 0:
        raise TagError(f"missing {needle}", len(text))
    second = text.find(needle, first + len(needle))
    if second >= 0:
        raise TagError(f"duplicated or nested {needle}", second)
    return first


def _split_sections(body: str, markers: CotMarkers, base: int):
    lines = body.splitlines()
    hits: dict[str, int] = {}
    lowered = {m.strip().lower(): name for name, m in markers.section_markers()}
    offsets = []
    pos = 0
    for idx, line in enumerate(lines):
        offsets.append(pos)
        pos += len(line) + 1
        name = lowered.get(line.strip().lower())
        if name is None:
            continue
        if name in hits:
            raise SectionError(f"duplicated section {name}", base + offsets[idx])
        hits[name] = idx

    order = [name for name, _ in markers.section_markers()]
    for name in order:
        if name not in hits:
            raise SectionError(f"missing section {name}", base + len(body))
    for earlier, later in zip(order, order[1:]):
        if hits[later] < hits[earlier]:
            raise OrderError(
                f"section {later} appears before {earlier}",
                base + offsets[hits[later]],
            )

    bodies = {}
    indices = [hits[name] for name in order]
    bounds = indices + [len(lines)]
    for k, name in enumerate(order):
        bodies[name] = "\n".join(lines[indices[k] + 1 : bounds[k + 1]])
    return bodies


def _parse_rpc(body: str, markers: CotMarkers, warnings: list[str]):
    blocks: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for line in body.splitlines():
        stripped = line.strip()
        kind = None
        if stripped.startswith(markers.frame_prefix):
            kind = "frame"
        elif stripped.startswith(markers.transition_prefix):
            kind = "transition"
        if kind is not None:
            close = stripped.find("]")
            rest = stripped[close + 1 :] if close >= 0 else ""
            current = [rest]
            blocks.append((kind, current))
        else:
            if current is None:
                if stripped:
                    current = [line]
                    blocks.append(("frame", current))
            else:
                current.append(line)

    if not blocks:
        return (_norm(body),)

    merged: list[tuple[str, str]] = []
    for kind, chunk in blocks:
        text = _norm("\n".join(chunk))
        if merged and merged[-1][0] == kind:
            warnings.append(f"coalesced adjacent {kind} blocks in the narrative")
            prev = merged.pop()
            text = _norm(prev[1] + "\n" + text)
        merged.append((kind, text))
    if merged[0][0] == "transition":
        warnings.append("narrative starts with a transition; empty frame prepended")
        merged.insert(0, ("frame", ""))
    if merged[-1][0] == "transition":
        warnings.append("narrative ends with a transition; empty frame appended")
        merged.append(("frame", ""))
    return tuple(text for _, text in merged)


def _parse_psa(body: str, warnings: list[str]) -> PsaSection:
    targets: list[str] = []
    candidates: list[str] = []
    relations: list[str] = []
    for line in body.splitlines():
        stripped = line.strip()
        low = stripped.lower()
        if low.startswith("targets:"):
            targets = [t.strip() for t in stripped[len("targets:") :].split(",")]
        elif low.startswith("candidates:"):
            candidates = [t.strip() for t in stripped[len("candidates:") :].split(",")]
        elif stripped.startswith("- "):
            relations.append(stripped[2:].strip())
    section = PsaSection(tuple(targets), tuple(candidates), tuple(relations))
    extra = [t for t in section.targets if t not in section.candidates]
    if extra:
        warnings.append(f"targets missing from candidates, added: {extra}")
        section = replace(
            section, candidates=section.candidates + tuple(extra)
        )
    return section


def _parse(text: str, markers: CotMarkers) -> tuple[CoTDocument, list[str]]:
    warnings: list[str] = []
    to = _find_single(text, markers.think_open)
    tc = _find_single(text, markers.think_close)
    ao = _find_single(text, markers.answer_open)
    ac = _find_single(text, markers.answer_close)
    if not (to < tc < ao < ac):
        raise TagError("tags out of order", min(tc, ao, ac))

    if not markers.lenient:
        if text[:to].strip():
            raise TagError(f"unexpected text before {markers.think_open}", 0)
        between = text[tc + len(markers.think_close) : ao]
        if between.strip():
            raise TagError(
                "unexpected text between think and answer blocks",
                tc + len(markers.think_close),
            )
        if text[ac + len(markers.answer_close) :].strip():
            raise TagError(
                f"unexpected text after {markers.answer_close}",
                ac + len(markers.answer_close),
            )

    think_body = text[to + len(markers.think_open) : tc]
    bodies = _split_sections(think_body, markers, to + len(markers.think_open))

    answer = text[ao + len(markers.answer_open) : ac].strip()
    if not answer:
        raise AnswerError("empty answer", ao + len(markers.answer_open))

    summary = _norm(bodies["Summary"])
    reasoning = _norm(bodies["Reasoning"])
    if not summary:
        warnings.append("summary section is empty")
    if not reasoning:
        warnings.append("reasoning section is empty")

    doc = CoTDocument(
        summary=summary,
        rpc_narrative=_parse_rpc(bodies["Role-Play Caption"], markers, warnings),
        psa_section=_parse_psa(bodies["Progressive Spatial Analysis"], warnings),
        reasoning=reasoning,
        answer=answer,
    )
    return doc, warnings


def parse(text: str, markers: CotMarkers = DEFAULT_MARKERS) -> CoTDocument:
    """Parse a chain-of-thought document; raises CoTParseError subclasses."""
    doc, _ = _parse(text, markers)
    return doc


def _check_renderable(doc: CoTDocument, markers: CotMarkers):
    problems = doc.invariant_violations()
    if problems:
        raise RenderError("; ".join(problems))

    tag_strings = (
        markers.think_open,
        markers.think_close,
        markers.answer_open,
        markers.answer_close,
    )
    section_strings = tuple(m.strip().lower() for _, m in markers.section_markers())

    def check_text(label: str, value: str, block: bool = False):
        for tag in tag_strings:
            if tag in value:
                raise RenderError(f"{label} contains reserved tag {tag!r}")
        for line in value.splitlines():
            if line.strip().lower() in section_strings:
                raise RenderError(f"{label} contains a section marker line")
            if block and (
                line.strip().startswith(markers.frame_prefix)
                or line.strip().startswith(markers.transition_prefix)
            ):
                raise RenderError(f"{label} contains a narrative block prefix")

    check_text("summary", doc.summary)
    check_text("reasoning", doc.reasoning)
    check_text("answer", doc.answer)
    if "\n" in doc.answer:
        raise RenderError("answer must be a single line")
    for i, blocktext in enumerate(doc.rpc_narrative):
        check_text(f"narrative block {i}", blocktext, block=True)
    for name, items in (
        ("targets", doc.psa_section.targets),
        ("candidates", doc.psa_section.candidates),
    ):
        for item in items:
            if "," in item or "\n" in item:
                raise RenderError(f"{name} entry {item!r} contains , or newline")
    for stmt in doc.psa_section.relations:
        if "\n" in stmt:
            raise RenderError("relation statements must be single lines")
        check_text("relation statement", stmt)


def render(doc: CoTDocument, markers: CotMarkers = DEFAULT_MARKERS) -> str:
    """Canonical text for a document; parse(render(doc)) == doc."""
    _check_renderable(doc, markers)
    lines = [markers.think_open, markers.summary, doc.summary, "", markers.rpc]
    for i, text in enumerate(doc.rpc_narrative):
        if i % 2 == 0:
            prefix = f"{markers.frame_prefix} {i // 2}]"
        else:
            prefix = f"{markers.transition_prefix} {i // 2}->{i // 2 + 1}]"
        lines.append(f"{prefix} {text}" if text else prefix)
    lines += [
        "",
        markers.psa,
        "Targets: " + ", ".join(doc.psa_section.targets),
        "Candidates: " + ", ".join(doc.psa_section.candidates),
        "Relations:",
    ]
    lines += [f"- {stmt}" for stmt in doc.psa_section.relations]
    lines += ["", markers.reasoning, doc.reasoning, markers.think_close]
    body = "\n".join(lines)
    return f"{body}\n{markers.answer_open}{doc.answer}{markers.answer_close}"


def format_reward(text: str, markers: CotMarkers = DEFAULT_MARKERS) -> int:
    """1 iff the text parses at the tag-and-section level; total function."""
    if not isinstance(text, str):
        return 0
    try:
        _parse(text, markers)
    except CoTParseError:
        return 0
    return 1


@dataclass
class ValidationReport:
    ok: bool
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    document: CoTDocument | None = None


def validate(text: str, markers: CotMarkers = DEFAULT_MARKERS) -> ValidationReport:
    """Parse plus deep structural checks; problems beyond the reward level
    come back as warnings."""
    try:
        doc, warnings = _parse(text, markers)
    except CoTParseError as exc:
        return ValidationReport(ok=False, errors=[f"{type(exc).__name__}: {exc}"])
    return ValidationReport(ok=True, warnings=warnings, document=doc)
