#!/usr/bin/env python3
"""Measure how candidate-set expansion depth affects graph answers.

For each expansion round count, reports how often the question-relevant
candidate set has stopped growing (hit its fixpoint) and confirms the
graph-side answers stay oracle-exact throughout.  Useful when tuning the
rounds/max_len defaults for denser scenes.
"""

from __future__ import annotations

import argparse
import random

from egoscene import simulator as sim
from egoscene.config import load_config
from egoscene.psa import answer_from_graph, build_task_context, expand_candidates
from egoscene.scene_graph import merge_observations


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--scenes", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-rounds", type=int, default=4)
    args = parser.parse_args()

    cfg = load_config()
    rng = random.Random(args.seed)
    saturated = {k: 0 for k in range(args.max_rounds + 1)}
    sizes = {k: 0 for k in range(args.max_rounds + 1)}
    n_questions = 0
    mismatches = 0

    for k in range(args.scenes):
        seed = args.seed + k
        scene = sim.generate_scene(seed, cfg.simulator, n_objects=rng.randint(8, 16))
        trajectory = sim.generate_trajectory(scene, seed, cfg.simulator.frames, cfg.simulator)
        observations, transitions = sim.observe_trajectory(scene, trajectory, cfg.simulator)
        graph = merge_observations(observations, transitions, by_id=True)
        annotations = sim.annotations_from_scene(scene)
        questions, _ = sim.generate_questions(
            scene, trajectory,
            ("object_count", "appearance_order", "relative_distance",
             "relative_direction"),
            seed, cfg.simulator,
        )
        for question in questions:
            n_questions += 1
            context = build_task_context(graph, question, cfg.psa.rounds, cfg.psa.max_len)
            if answer_from_graph(graph, context, question, annotations) != (
                sim.oracle_answer(scene, trajectory, question, cfg.simulator)
            ):
                mismatches += 1
            for rounds in range(args.max_rounds + 1):
                grown = expand_candidates(graph, list(context.targets), rounds)
                sizes[rounds] += len(grown)
                if grown == expand_candidates(graph, list(context.targets), rounds + 1):
                    saturated[rounds] += 1

    print(f"{args.scenes} scenes, {n_questions} questions, {mismatches} oracle mismatches")
    print("rounds  mean candidates  saturated")
    for rounds in range(args.max_rounds + 1):
        print(
            f"{rounds:>6}  {sizes[rounds] / n_questions:>15.2f}"
            f"  {100.0 * saturated[rounds] / n_questions:>8.1f}%"
        )


if __name__ == "__main__":
    main()
