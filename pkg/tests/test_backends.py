from __future__ import annotations

import json

import pytest
import requests

from egoscene.backends import (
    BackendRequest,
    HttpChatBackend,
    MockChatBackend,
    TransportError,
)


def request(stage="caption_frames", user="FRAMES:\nFrame 0: a room."):
    return BackendRequest(
        model_hint="gpt-4o",
        system_text=f"Stage: {stage}\nYou do things.",
        user_parts=({"type": "text", "text": user},),
        temperature=0.2,
        max_output_tokens=128,
    )


class TestBackendRequest:
    def test_empty_user_parts_rejected(self):
        with pytest.raises(ValueError):
            BackendRequest("m", "", ())

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            BackendRequest("m", "", ({"type": "text", "text": "x"},), temperature=-1)

    def test_stage_parsed_from_system_text(self):
        assert request("merge_cot").stage == "merge_cot"
        assert BackendRequest("m", "no stage line", ({"type": "text", "text": "x"},)).stage == ""


class _FakeResponse:
    def __init__(self, payload, status=200):
        self._payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"status {self.status_code}")

    def json(self):
        return self._payload


class _FakeSession:
    def __init__(self, payload, status=200, error=None):
        self.payload = payload
        self.status = status
        self.error = error
        self.sent = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.sent.append({"url": url, "body": json, "headers": headers})
        if self.error:
            raise self.error
        return _FakeResponse(self.payload, self.status)


class TestHttpChatBackend:
    def make(self, payload, **kwargs):
        backend = HttpChatBackend("http://example.test/v1/chat", api_key="k")
        backend._session = _FakeSession(payload, **kwargs)
        return backend

    def test_wire_format(self):
        payload = {
            "choices": [{"message": {"content": "hello"}}],
            "usage": {"total_tokens": 21},
        }
        backend = self.make(payload)
        response = backend.complete(request())
        assert response.text == "hello"
        assert response.token_usage == 21
        body = backend._session.sent[0]["body"]
        assert body["model"] == "gpt-4o"
        assert body["temperature"] == 0.2
        assert body["max_tokens"] == 128
        assert body["messages"][0]["role"] == "system"
        assert body["messages"][1]["role"] == "user"
        assert body["messages"][1]["content"][0]["type"] == "text"
        headers = backend._session.sent[0]["headers"]
        assert headers["Authorization"] == "Bearer k"

    def test_usage_estimated_when_absent(self):
        payload = {"choices": [{"message": {"content": "x" * 40}}]}
        assert self.make(payload).complete(request()).token_usage == 10

    def test_http_error_becomes_transport_error(self):
        backend = self.make({}, status=503)
        with pytest.raises(TransportError):
            backend.complete(request())

    def test_connection_error_becomes_transport_error(self):
        backend = self.make({}, error=requests.ConnectionError("refused"))
        with pytest.raises(TransportError):
            backend.complete(request())

    def test_malformed_payload_becomes_transport_error(self):
        backend = self.make({"choices": []})
        with pytest.raises(TransportError):
            backend.complete(request())

    def test_empty_url_rejected(self):
        with pytest.raises(ValueError):
            HttpChatBackend("")


class TestMockChatBackend:
    def test_counts_and_logs_stages(self):
        backend = MockChatBackend()
        backend.complete(request("caption_frames"))
        backend.complete(request("quality_check"))
        assert backend.call_count == 2
        assert backend.calls == ["caption_frames", "quality_check"]

    def test_fail_plan_by_call_number(self):
        backend = MockChatBackend(fail_on_calls={2})
        backend.complete(request())
        with pytest.raises(TransportError):
            backend.complete(request())
        backend.complete(request())  # third call succeeds

    def test_override_by_stage_occurrence(self):
        backend = MockChatBackend(overrides={("caption_frames", 2): "CANNED"})
        first = backend.complete(request())
        second = backend.complete(request())
        assert first.text != "CANNED"
        assert second.text == "CANNED"

    def test_caption_synthesis_echoes_frames(self):
        backend = MockChatBackend()
        response = backend.complete(
            request(user="FRAMES:\nFrame 0: a red sofa.\nFrame 1: a tv.")
        )
        assert "Frame 0: a red sofa." in response.text
        assert "Frame 1: a tv." in response.text

    def test_rpc_synthesis_alternates_blocks(self):
        backend = MockChatBackend()
        user = (
            "CAPTIONS:\nFrame 0: a sofa.\nFrame 1: a tv.\n\n"
            "TRANSITIONS:\nTransition 0->1: I move forward."
        )
        text = backend.complete(request("synthesize_rpc", user)).text
        lines = text.splitlines()
        assert lines[0].startswith("[Frame 0]")
        assert lines[1].startswith("[Transition 0->1]")
        assert lines[2].startswith("[Frame 1]")
