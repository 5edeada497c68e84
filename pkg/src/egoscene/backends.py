"""Chat-completion backends: a real HTTP client and a deterministic mock.

The wire format follows the de-facto open chat-completion schema
(messages with text/image_url parts).  Every prompt template begins its
system text with a "Stage: <name>" line; the mock uses that to route, a
real backend simply sees it as context.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import requests


class TransportError(RuntimeError):
    """The backend could not be reached or returned garbage."""


@dataclass(frozen=True)
class BackendRequest:
    model_hint: str
    system_text: str
    user_parts: tuple[dict, ...]
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self):
        if not self.user_parts:
            raise ValueError("user_parts must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def user_text(self) -> str:
        return "\n".join(
            p.get("text", "") for p in self.user_parts if p.get("type") == "text"
        )

    @property
    def stage(self) -> str:
        first = self.system_text.splitlines()[0] if self.system_text else ""
        if first.lower().startswith("stage:"):
            return first.split(":", 1)[1].strip()
        return ""


@dataclass(frozen=True)
class BackendResponse:
    text: str
    token_usage: int
    latency_ms: float


class HttpChatBackend:
    """POSTs chat-completion bodies to a configured endpoint."""

    def __init__(self, url: str, api_key: str = "", timeout: float = 60.0):
        if not url:
            raise ValueError("backend url is empty; set GEN_BACKEND_URL")
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self._session = requests.Session()

    def complete(self, request: BackendRequest) -> BackendResponse:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": list(request.user_parts)})
        body = {
            "model": request.model_hint,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            resp = self._session.post(
                self.url, json=body, headers=headers, timeout=self.timeout
            )
            resp.raise_for_status()
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise TransportError(str(exc)) from exc
        usage = payload.get("usage", {}).get("total_tokens")
        if usage is None:
            usage = max(len(text) // 4, 1)
        return BackendResponse(
            text=text,
            token_usage=int(usage),
            latency_ms=(time.monotonic() - started) * 1000.0,
        )


def _extract_block(text: str, header: str) -> str:
    """Lines following `HEADER:` up to the next all-caps header line."""
    lines = text.splitlines()
    out: list[str] = []
    capturing = False
    for line in lines:
        stripped = line.strip()
        is_header = (
            stripped.endswith(":")
            and stripped[:-1].replace(" ", "").replace("-", "").isalpha()
            and stripped[:-1].upper() == stripped[:-1]
            and len(stripped) > 2
        )
        if capturing and is_header:
            break
        if capturing:
            out.append(line)
        elif stripped.upper() == header.upper() + ":":
            capturing = True
    return "\n".join(out).strip()


class MockChatBackend:
    """Fixture-style deterministic backend for tests and offline runs.

    Default behavior synthesizes well-formed stage outputs from the prompt
    content.  Tests can inject failures by call number and override the
    response of the N-th occurrence of a stage.
    """

    def __init__(
        self,
        fail_on_calls: set[int] | None = None,
        overrides: dict[tuple[str, int], str] | None = None,
    ):
        self.fail_on_calls = fail_on_calls or set()
        self.overrides = overrides or {}
        self.calls: list[str] = []
        self._stage_counts: dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def complete(self, request: BackendRequest) -> BackendResponse:
        stage = request.stage or "unknown"
        with self._lock:
            self.calls.append(stage)
            call_no = len(self.calls)
            self._stage_counts[stage] = self._stage_counts.get(stage, 0) + 1
            occurrence = self._stage_counts[stage]
        if call_no in self.fail_on_calls:
            raise TransportError(f"injected transport failure on call {call_no}")
        override = self.overrides.get((stage, occurrence))
        text = override if override is not None else self._synthesize(stage, request)
        return BackendResponse(
            text=text, token_usage=max(len(text) // 4, 1), latency_ms=0.0
        )

    def _synthesize(self, stage: str, request: BackendRequest) -> str:
        user = request.user_text()
        if stage == "caption_frames":
            frames = _extract_block(user, "FRAMES")
            lines = [l for l in frames.splitlines() if l.strip()]
            return "\n".join(lines) if lines else "Frame 0: An empty view."
        if stage == "infer_transitions":
            captions = _extract_block(user, "CAPTIONS")
            n = sum(1 for l in captions.splitlines() if l.strip())
            return "\n".join(
                f"Transition {i}->{i + 1}: I look around and keep moving."
                for i in range(max(n - 1, 0))
            )
        if stage == "synthesize_rpc":
            return self._synthesize_rpc(user)
        if stage == "extract_context":
            question = _extract_block(user, "QUESTION")
            mentioned = _extract_block(user, "MENTIONED OBJECTS")
            targets = [t.strip() for t in mentioned.split(",") if t.strip()]
            lines = [f"Task summary: {question.strip()}"]
            lines.append("Targets: " + ", ".join(targets))
            lines.append("Candidates: " + ", ".join(targets))
            lines.append("Relations:")
            for t in targets[1:]:
                lines.append(f"- the {t} is near the {targets[0]}")
            return "\n".join(lines)
        if stage == "merge_cot":
            return self._synthesize_cot(user)
        if stage == "quality_check":
            return (
                "Hallucination Check: PASS\n"
                "Rationale: The narrative matches the frame descriptions.\n"
                "Logical Consistency: PASS\n"
                "Rationale: The conclusion follows from the extracted context."
            )
        return "OK"

    def _synthesize_rpc(self, user: str) -> str:
        captions = [
            l.strip()
            for l in _extract_block(user, "CAPTIONS").splitlines()
            if l.strip()
        ]
        transitions = [
            l.strip()
            for l in _extract_block(user, "TRANSITIONS").splitlines()
            if l.strip()
        ]

        def strip_prefix(line: str) -> str:
            return line.split(":", 1)[1].strip() if ":" in line else line

        blocks = []
        for i, cap in enumerate(captions):
            blocks.append(f"[Frame {i}] {strip_prefix(cap)}")
            if i < len(captions) - 1:
                tr = strip_prefix(transitions[i]) if i < len(transitions) else "I move."
                blocks.append(f"[Transition {i}->{i + 1}] {tr}")
        return "\n".join(blocks) if blocks else "[Frame 0] An empty view."

    def _synthesize_cot(self, user: str) -> str:
        from .cot import CoTDocument, PsaSection, render

        question = _extract_block(user, "QUESTION")
        truth = _extract_block(user, "GROUND TRUTH")
        rpc = _extract_block(user, "ROLE-PLAY CAPTION")
        context = _extract_block(user, "SPATIAL CONTEXT")

        blocks: list[tuple[str, str]] = []
        for line in rpc.splitlines():
            stripped = line.strip()
            if stripped.startswith("[Frame") or stripped.startswith("[Transition"):
                kind = "frame" if stripped.startswith("[Frame") else "transition"
                close = stripped.find("]")
                blocks.append((kind, stripped[close + 1 :].strip()))
            elif blocks and stripped:
                blocks[-1] = (blocks[-1][0], blocks[-1][1] + "\n" + stripped)
        if not blocks:
            blocks = [("frame", rpc.strip() or "I look around the room.")]

        narrative: list[str] = []
        for kind, text in blocks:
            expected = "frame" if len(narrative) % 2 == 0 else "transition"
            if kind != expected:
                narrative.append(
                    "I keep observing the scene."
                    if expected == "frame"
                    else "I shift my view."
                )
            narrative.append(text)
        if len(narrative) % 2 == 0:
            narrative.append("I keep observing the scene.")

        targets: list[str] = []
        candidates: list[str] = []
        relations: list[str] = []
        for line in context.splitlines():
            stripped = line.strip()
            low = stripped.lower()
            if low.startswith("targets:"):
                targets = [t.strip() for t in stripped.split(":", 1)[1].split(",")]
            elif low.startswith("candidates:"):
                candidates = [t.strip() for t in stripped.split(":", 1)[1].split(",")]
            elif stripped.startswith("- "):
                relations.append(stripped[2:])
        if not candidates:
            candidates = list(targets)

        answer = truth.strip() or "unknown"
        doc = CoTDocument(
            summary=(
                f"The question is: {question.strip()} I will replay my walk "
                "through the scene and reason about the relevant objects."
            ),
            rpc_narrative=tuple(narrative),
            psa_section=PsaSection(tuple(targets), tuple(candidates), tuple(relations)),
            reasoning=(
                "Combining the observed layout with the extracted spatial "
                f"context, the answer is {answer}."
            ),
            answer=answer,
        )
        return render(doc)
