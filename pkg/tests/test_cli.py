from __future__ import annotations

import json

import pytest

from egoscene.cli import main
from egoscene.config import load_config
from egoscene.cot import CoTDocument, PsaSection, render


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestSimulate:
    def test_zero_scenes_gives_empty_dataset(self, tmp_path, capsys):
        out = tmp_path / "data.jsonl"
        assert run_cli("simulate", "--seed", 1, "--n-scenes", 0, "--out", out) == 0
        assert out.read_text() == ""

    def test_same_seed_twice_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run_cli("simulate", "--seed", 5, "--n-scenes", 3, "--out", a) == 0
        assert run_cli("simulate", "--seed", 5, "--n-scenes", 3, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run_cli("simulate", "--seed", 5, "--n-scenes", 1, "--out", a)
        run_cli("simulate", "--seed", 6, "--n-scenes", 1, "--out", b)
        assert a.read_bytes() != b.read_bytes()

    def test_two_hundred_scenes_self_consistent_under_ten_seconds(self, tmp_path):
        import time

        out = tmp_path / "big.jsonl"
        started = time.perf_counter()
        assert run_cli("simulate", "--seed", 0, "--n-scenes", 200, "--out", out) == 0
        assert time.perf_counter() - started < 10.0
        assert len(out.read_text().splitlines()) == 200


class TestValidateCot:
    def doc_text(self, answer="C"):
        return render(
            CoTDocument(
                summary="Summary text.",
                rpc_narrative=("A frame.",),
                psa_section=PsaSection((), (), ()),
                reasoning="Reasoning text.",
                answer=answer,
            )
        )

    def test_all_pass(self, tmp_path, capsys):
        path = tmp_path / "docs.jsonl"
        rows = [{"sample_id": f"s{i}", "text": self.doc_text()} for i in range(3)]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        assert run_cli("validate-cot", path) == 0
        assert capsys.readouterr().out.count("PASS") >= 3

    def test_corruption_counted_and_located(self, tmp_path, capsys):
        rows = [
            {"sample_id": "ok", "text": self.doc_text()},
            {"sample_id": "bad-tag", "text": self.doc_text().replace("</think>", "")},
            {"sample_id": "ok2", "text": self.doc_text()},
            {"sample_id": "bad-ans", "text": self.doc_text().replace(">C<", "><")},
        ]
        path = tmp_path / "docs.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        assert run_cli("validate-cot", path) == 1
        out = capsys.readouterr().out
        assert out.count("FAIL") == 2
        assert "offset" in out  # error locations reported

    def test_custom_field(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        path.write_text(json.dumps({"sample_id": "x", "target_text": self.doc_text()}) + "\n")
        assert run_cli("validate-cot", path, "--field", "target_text") == 0
        assert run_cli("validate-cot", path) == 1  # default field missing


class TestGrpoCheck:
    def group_record(self, rewards=(1.0, 0.0), beta=0.0, logprob=-1.0):
        return {
            "question_id": "q1",
            "epsilon": 0.2,
            "beta": beta,
            "rollouts": [
                {
                    "response_text": "",
                    "reward": r,
                    "policy_logprobs": [logprob],
                    "old_logprobs": [logprob],
                    "ref_logprobs": [logprob],
                }
                for r in rewards
            ],
        }

    def test_textbook_group_objective_zero(self, tmp_path, capsys):
        path = tmp_path / "groups.jsonl"
        path.write_text(json.dumps(self.group_record((1.0, 0.0, 1.0, 0.0))) + "\n")
        audit_path = tmp_path / "audit.jsonl"
        assert run_cli("grpo-check", path, "--out", audit_path) == 0
        audit = json.loads(audit_path.read_text())
        assert audit["objective"] == pytest.approx(0.0, abs=1e-12)
        assert audit["advantages"] == [1.0, -1.0, 1.0, -1.0]

    def test_zero_variance_flagged_informational(self, tmp_path, capsys):
        path = tmp_path / "groups.jsonl"
        path.write_text(json.dumps(self.group_record((0.5, 0.5))) + "\n")
        assert run_cli("grpo-check", path) == 0
        assert "zero-variance" in capsys.readouterr().out

    def test_positive_logprob_is_hard_error(self, tmp_path, capsys):
        path = tmp_path / "groups.jsonl"
        path.write_text(json.dumps(self.group_record(logprob=0.5)) + "\n")
        assert run_cli("grpo-check", path) == 1
        assert "positive" in capsys.readouterr().out

    def test_unreadable_file_is_operational_error(self, tmp_path):
        assert run_cli("grpo-check", tmp_path / "missing.jsonl") == 2


class TestGenData:
    def test_mock_chain_and_resume(self, tmp_path, capsys):
        data = tmp_path / "data.jsonl"
        run_cli("simulate", "--seed", 2, "--n-scenes", 1, "--out", data)
        out_dir = tmp_path / "gen"
        assert (
            run_cli(
                "gen-data", "--dataset", data, "--limit", 4, "--backend", "mock",
                "--out", out_dir,
            )
            == 0
        )
        sft = [json.loads(l) for l in (out_dir / "sft.jsonl").read_text().splitlines()]
        assert len(sft) == 4
        manifest_lines = (out_dir / "manifest.jsonl").read_text().splitlines()
        summary = json.loads(manifest_lines[-1])
        assert summary["n_done"] == 4

        # resume writes identical outputs; token totals come entirely from
        # the journal, proving no backend call was repeated
        first_sft = (out_dir / "sft.jsonl").read_bytes()
        assert (
            run_cli(
                "gen-data", "--dataset", data, "--limit", 4, "--backend", "mock",
                "--out", out_dir,
            )
            == 0
        )
        resumed = json.loads(
            (out_dir / "manifest.jsonl").read_text().splitlines()[-1]
        )
        assert resumed["n_done"] == 4
        assert resumed["total_tokens"] == summary["total_tokens"]
        assert (out_dir / "sft.jsonl").read_bytes() == first_sft

    def test_missing_source_is_operational(self, tmp_path):
        assert run_cli("gen-data", "--out", tmp_path / "x") == 2

    def test_live_backend_gated_behind_explicit_flag(self, tmp_path, monkeypatch):
        # mock is the default; http requires asking for it AND an endpoint
        monkeypatch.delenv("GEN_BACKEND_URL", raising=False)
        data = tmp_path / "data.jsonl"
        run_cli("simulate", "--seed", 3, "--n-scenes", 1, "--out", data)
        assert (
            run_cli(
                "gen-data", "--dataset", data, "--limit", 1, "--backend", "http",
                "--out", tmp_path / "g",
            )
            == 2
        )


class TestConfigHandling:
    def test_config_file_applied(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[psa]\nrounds = 3\n")
        cfg = load_config(cfg_file)
        assert cfg.psa.rounds == 3

    def test_cot_markers_from_config(self, tmp_path, capsys):
        from egoscene.cot import CotMarkers, CoTDocument, PsaSection, render

        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text('[cot]\nsummary = "### Plan"\n')
        cfg = load_config(cfg_file)
        assert cfg.cot.summary == "### Plan"
        doc = CoTDocument(
            summary="Plan text.",
            rpc_narrative=("A frame.",),
            psa_section=PsaSection((), (), ()),
            reasoning="Reasoning.",
            answer="A",
        )
        text = render(doc, CotMarkers(summary="### Plan"))
        path = tmp_path / "docs.jsonl"
        path.write_text(json.dumps({"sample_id": "x", "text": text}) + "\n")
        assert run_cli("validate-cot", path, "--config", cfg_file) == 0
        assert run_cli("validate-cot", path) == 1  # default markers reject it

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[psa]\nroundz = 3\n")
        with pytest.raises(ValueError) as err:
            load_config(cfg_file)
        assert "roundz" in str(err.value)

    def test_unknown_section_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ValueError):
            load_config(cfg_file)

    def test_out_of_range_value_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[reward]\nepsilon = 1.5\n")
        with pytest.raises(ValueError):
            load_config(cfg_file)

    def test_paper_default_constants(self):
        cfg = load_config()
        assert cfg.reward.w_format == 0.2
        assert cfg.reward.w_accuracy == 0.8
        assert cfg.reward.beta == 1e-4
        assert cfg.reward.group_size == 8
        assert cfg.simulator.frames == 16

    def test_env_overrides_backend_secrets(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GEN_BACKEND_URL", "http://example.test/v1")
        monkeypatch.setenv("GEN_BACKEND_KEY", "sekrit")
        cfg = load_config()
        assert cfg.backend.url == "http://example.test/v1"
        assert cfg.backend.api_key == "sekrit"

    def test_cli_reports_bad_config_as_operational(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[reward]\nepsilon = 1.5\n")
        out = tmp_path / "d.jsonl"
        assert (
            run_cli(
                "simulate", "--config", cfg_file, "--seed", 0, "--n-scenes", 0,
                "--out", out,
            )
            == 2
        )
