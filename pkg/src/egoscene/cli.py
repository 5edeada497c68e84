"""Command-line entry point: one subcommand per subsystem.

Exit codes are a stable CI contract: 0 success, 1 validation failures
present, 2 operational error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import cot, harness, pipeline, rewards, simulator
from .backends import HttpChatBackend, MockChatBackend
from .config import Config, load_config

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_OPERATIONAL = 2


def _load_cfg(args) -> Config:
    cfg = load_config(args.config)
    if getattr(args, "backend_url", None):
        cfg = dataclasses.replace(
            cfg, backend=dataclasses.replace(cfg.backend, url=args.backend_url)
        )
    if getattr(args, "parallelism", None):
        cfg = dataclasses.replace(
            cfg,
            pipeline=dataclasses.replace(
                cfg.pipeline, parallelism=args.parallelism
            ),
        )
    return cfg


def cmd_simulate(args, cfg: Config) -> int:
    out = Path(args.out or cfg.paths.dataset)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_questions = 0
    n_checked = 0
    with open(out, "w", encoding="utf-8") as fh:
        for k in range(args.n_scenes):
            record = simulator.build_dataset_record(args.seed + k, cfg.simulator)
            n_checked += verify_record_consistency(record, cfg)
            n_questions += len(record["questions"])
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(
        f"simulate: wrote {args.n_scenes} scenes, {n_questions} questions "
        f"({n_checked} oracle self-consistency checks passed) -> {out}"
    )
    return EXIT_OK


def verify_record_consistency(record: dict, cfg: Config) -> int:
    """Recompute every oracle answer from the serialized record."""
    scene = simulator.scene_from_record(record["scene"])
    trajectory = [
        simulator.CameraPose(
            x=p["x"],
            y=p["y"],
            heading=p["heading"],
            fov=cfg.simulator.fov,
            view_range=cfg.simulator.view_range,
        )
        for p in record["trajectory"]
    ]
    checked = 0
    for q in record["questions"]:
        question = simulator.StructuredQuestion.from_dict(q)
        recomputed = simulator.oracle_answer(
            scene, trajectory, question, cfg.simulator
        )
        if recomputed != question.ground_truth:
            raise simulator.QuestionProvenanceError(
                f"{question.question_id}: stored truth "
                f"{question.ground_truth} != recomputed {recomputed}"
            )
        checked += 1
    return checked


def cmd_validate_cot(args, cfg: Config) -> int:
    failures = 0
    total = 0
    with open(args.file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            name = (
                record.get("sample_id")
                or record.get("question_id")
                or f"line-{lineno}"
            )
            text = record.get(args.field, "")
            report = cot.validate(text, cfg.cot)
            total += 1
            if report.ok:
                suffix = (
                    f" ({len(report.warnings)} warnings)" if report.warnings else ""
                )
                print(f"PASS {name}{suffix}")
            else:
                failures += 1
                print(f"FAIL {name}: {'; '.join(report.errors)}")
    print(f"validate-cot: {total - failures}/{total} records pass")
    return EXIT_VALIDATION if failures else EXIT_OK


def cmd_score(args, cfg: Config) -> int:
    report = harness.score_run(
        args.predictions,
        markers=cfg.cot,
        thresholds=cfg.reward.mra_thresholds,
        strict=args.strict,
    )
    report.metadata["weights"] = {
        "w_format": cfg.reward.w_format,
        "w_accuracy": cfg.reward.w_accuracy,
    }
    table = harness.render_text_table(report)
    print(table, end="")
    prefix = Path(args.out or cfg.paths.report_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    harness.emit_report(report, "text-table", prefix.with_suffix(".txt"))
    harness.emit_report(report, "csv", prefix.with_suffix(".csv"))
    return EXIT_VALIDATION if report.errors else EXIT_OK


def cmd_grpo_check(args, cfg: Config) -> int:
    groups = rewards.load_rollout_groups(args.file)
    any_violations = False
    audits = []
    for group in groups:
        violations = group.violations()
        if violations:
            any_violations = True
            print(f"FAIL {group.question_id}: {'; '.join(violations)}")
            audits.append(
                {"question_id": group.question_id, "violations": violations}
            )
            continue
        audit = rewards.audit_group(group, cfg.reward.kl_reduction)
        flag = " [zero-variance]" if audit.zero_variance else ""
        print(
            f"OK {group.question_id}: objective={audit.objective:.6g} "
            f"G={group.size}{flag}"
        )
        audits.append(
            {
                "question_id": audit.question_id,
                "objective": audit.objective,
                "advantages": audit.advantages,
                "ratios": audit.ratios,
                "surrogates": audit.surrogates,
                "kls": audit.kls,
                "notes": audit.notes,
            }
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in audits:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"grpo-check: {len(groups)} groups, violations={any_violations}")
    return EXIT_VALIDATION if any_violations else EXIT_OK


def cmd_gen_data(args, cfg: Config) -> int:
    if args.jobs:
        jobs = pipeline.jobs_from_file(args.jobs)
    elif args.dataset:
        jobs = pipeline.jobs_from_dataset(args.dataset, limit=args.limit)
    else:
        print("gen-data: need --jobs or --dataset", file=sys.stderr)
        return EXIT_OPERATIONAL
    if args.limit is not None:
        jobs = jobs[: args.limit]

    if args.backend == "mock":
        backend = MockChatBackend()
    else:
        backend = HttpChatBackend(cfg.backend.url, cfg.backend.api_key)

    out_dir = Path(args.out or cfg.paths.gen_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    persist = Path(args.persist_dir) if args.persist_dir else out_dir / "state"
    templates = pipeline.TemplateSet(cfg.pipeline.template_dir or None)

    manifest = pipeline.run_pipeline(jobs, backend, templates, cfg, persist)
    manifest.write(out_dir / "manifest.jsonl")

    n_sft = n_rl = 0
    with open(out_dir / "sft.jsonl", "w", encoding="utf-8") as fh:
        for job in jobs:
            if job.status == "done" and job.all_verdicts_pass():
                fh.write(
                    json.dumps(
                        pipeline.assemble_sft_sample(job, templates), sort_keys=True
                    )
                    + "\n"
                )
                n_sft += 1
    with open(out_dir / "rl.jsonl", "w", encoding="utf-8") as fh:
        for job in jobs:
            if job.question is not None and job.question.ground_truth is not None:
                fh.write(
                    json.dumps(
                        pipeline.assemble_rl_sample(job.question, templates),
                        sort_keys=True,
                    )
                    + "\n"
                )
                n_rl += 1
    print(
        f"gen-data: {manifest.n_done}/{len(jobs)} jobs done, "
        f"{manifest.n_failed} failed, {n_sft} sft records, {n_rl} rl records, "
        f"{manifest.total_tokens} tokens -> {out_dir}"
    )
    return EXIT_VALIDATION if manifest.n_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--parallelism", type=int, default=None)
    common.add_argument("--strict", action="store_true")
    common.add_argument(
        "--backend-url", default=None, help="overrides config/env backend url"
    )

    parser = argparse.ArgumentParser(
        prog="egoscene",
        description="egocentric scene reasoning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a scene dataset")
    p.add_argument("--n-scenes", type=int, required=True)
    p.add_argument("--out", default=None, help="dataset path (default from config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "validate-cot", parents=[common], help="check documents against the grammar"
    )
    p.add_argument("file")
    p.add_argument("--field", default="text", help="JSONL field holding the document")
    p.set_defaults(func=cmd_validate_cot)

    p = sub.add_parser("score", parents=[common], help="score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default=None, help="output path prefix (default from config)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser(
        "grpo-check", parents=[common], help="audit rollout groups"
    )
    p.add_argument("file")
    p.add_argument("--out", default=None, help="optional audit JSONL path")
    p.set_defaults(func=cmd_grpo_check)

    p = sub.add_parser(
        "gen-data", parents=[common], help="run the generation pipeline"
    )
    p.add_argument("--jobs", default=None, help="jobs JSONL file")
    p.add_argument("--dataset", default=None, help="simulator dataset as job source")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--backend", choices=("mock", "http"), default="mock")
    p.add_argument("--out", default=None, help="output directory (default from config)")
    p.add_argument("--persist-dir", default=None)
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_cfg(args)
        return args.func(args, cfg)
    except (
        OSError,
        ValueError,
        KeyError,
        simulator.SceneGenerationError,
        simulator.TrajectoryError,
        pipeline.PipelineError,
    ) as exc:
        print(f"egoscene {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL


if __name__ == "__main__":
    sys.exit(main())
