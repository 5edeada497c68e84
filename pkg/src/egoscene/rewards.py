"""Reward and policy-gradient bookkeeping for grouped rollouts.

Scalar accuracy metrics (exact-match for multiple choice, mean relative
accuracy for numbers), the weighted format+accuracy reward, and the
group-relative quantities: normalized advantages, importance ratios,
clipped surrogates, KL penalties, and the per-group objective value.
Scoring and auditing only; no gradients, no parameter updates.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

DEFAULT_MRA_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

_LETTER_RE = re.compile(r"\b([A-Da-d])\b")


class NumericOverflowError(ArithmeticError):
    """A ratio or objective left double range."""


def mra(
    prediction: float,
    truth: float,
    thresholds: tuple[float, ...] = DEFAULT_MRA_THRESHOLDS,
) -> float:
    """Fraction of confidence thresholds the relative error stays under.

    Passes threshold t when |prediction - truth| / |truth| < 1 - t.  A
    zero truth scores 1 only on an exactly-zero prediction (the relative
    error is undefined there, and this keeps the metric total).
    """
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    if any(not (0.0 < t < 1.0) for t in thresholds):
        raise ValueError("thresholds must lie strictly inside (0, 1)")
    if not math.isfinite(truth):
        raise ValueError("truth must be finite")
    if truth == 0:
        return 1.0 if prediction == 0 else 0.0
    rel_err = abs(prediction - truth) / abs(truth)
    passed = sum(1 for t in thresholds if rel_err < 1.0 - t)
    return passed / len(thresholds)


def extract_option_letter(answer_text: str) -> str | None:
    """The unique standalone option letter in the text, if there is one."""
    stripped = answer_text.strip().strip(".,;:!?()[]\"'")
    if len(stripped) == 1 and stripped.upper() in "ABCD":
        return stripped.upper()
    letters = {m.upper() for m in _LETTER_RE.findall(answer_text)}
    if len(letters) == 1:
        return letters.pop()
    return None


def mcq_accuracy(answer_text: str, truth_letter: str) -> int:
    """Exact match on the extracted option letter; 0 when extraction is
    empty or ambiguous."""
    if truth_letter not in ("A", "B", "C", "D"):
        raise ValueError(f"truth letter must be one of A-D, got {truth_letter!r}")
    return int(extract_option_letter(answer_text) == truth_letter)


def combined_reward(
    format_score: float, accuracy_score: float, w_format: float, w_accuracy: float
) -> float:
    if w_format < 0 or w_accuracy < 0:
        raise ValueError("reward weights must be non-negative")
    return w_format * format_score + w_accuracy * accuracy_score


def group_advantages(rewards: list[float] | tuple[float, ...]) -> list[float]:
    """Group-normalized advantages: (R_i - mean) / population std.

    A zero-variance group gets all-zero advantages instead of a division
    blowup; uniform groups carry no preference signal either way.  The
    mean is folded back once after centering so the advantages sum to
    zero at full float precision.
    """
    n = len(rewards)
    if n < 2:
        raise ValueError("a rollout group needs at least 2 rewards")
    if all(r == rewards[0] for r in rewards):
        return [0.0] * n
    mean = math.fsum(rewards) / n
    centered = [r - mean for r in rewards]
    residual = math.fsum(centered) / n
    centered = [c - residual for c in centered]
    std = math.sqrt(math.fsum(c * c for c in centered) / n)
    if std == 0.0:
        return [0.0] * n
    return [c / std for c in centered]


def importance_ratio(policy_logprob_sum: float, old_logprob_sum: float) -> float:
    if not (math.isfinite(policy_logprob_sum) and math.isfinite(old_logprob_sum)):
        raise ValueError("log-probability sums must be finite")
    try:
        ratio = math.exp(policy_logprob_sum - old_logprob_sum)
    except OverflowError:
        raise NumericOverflowError("importance ratio overflowed") from None
    if not math.isfinite(ratio):
        raise NumericOverflowError("importance ratio is not finite")
    return ratio


def clipped_surrogate(ratio: float, advantage: float, epsilon: float) -> float:
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def kl_penalty(
    policy_logprobs: list[float] | tuple[float, ...],
    ref_logprobs: list[float] | tuple[float, ...],
    reduction: str = "mean",
) -> float:
    """Non-negative KL estimate exp(d) - d - 1 with d = ref - policy,
    reduced over tokens; zero exactly when the sequences are equal."""
    if len(policy_logprobs) != len(ref_logprobs):
        raise ValueError("log-probability sequences differ in length")
    if not policy_logprobs:
        raise ValueError("log-probability sequences must be non-empty")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    terms = []
    for p, r in zip(policy_logprobs, ref_logprobs):
        delta = r - p
        # the estimator is >= 0 analytically; clamp away sub-ulp rounding dips
        terms.append(max(math.exp(delta) - delta - 1.0, 0.0))
    total = math.fsum(terms)
    return total / len(terms) if reduction == "mean" else total


@dataclass(frozen=True)
class Rollout:
    response_text: str
    reward: float
    policy_logprobs: tuple[float, ...]
    old_logprobs: tuple[float, ...]
    ref_logprobs: tuple[float, ...]

    @property
    def token_count(self) -> int:
        return len(self.policy_logprobs)

    def violations(self) -> list[str]:
        out = []
        n = len(self.policy_logprobs)
        if n < 1:
            out.append("rollout has no tokens")
        if len(self.old_logprobs) != n or len(self.ref_logprobs) != n:
            out.append("log-probability sequences differ in length")
        for name, seq in (
            ("policy", self.policy_logprobs),
            ("old", self.old_logprobs),
            ("ref", self.ref_logprobs),
        ):
            if any(lp > 0 for lp in seq):
                out.append(f"{name} log-probabilities contain positive values")
                break
        return out


@dataclass(frozen=True)
class RolloutGroup:
    question_id: str
    rollouts: tuple[Rollout, ...]
    epsilon: float
    beta: float

    @property
    def size(self) -> int:
        return len(self.rollouts)

    def violations(self) -> list[str]:
        out = []
        if len(self.rollouts) < 2:
            out.append("group needs at least 2 rollouts")
        if not (0.0 < self.epsilon < 1.0):
            out.append(f"epsilon {self.epsilon} outside (0, 1)")
        if self.beta < 0:
            out.append(f"beta {self.beta} is negative")
        for i, rollout in enumerate(self.rollouts):
            out.extend(f"rollout {i}: {v}" for v in rollout.violations())
        return out


@dataclass
class GroupAudit:
    question_id: str
    advantages: list[float]
    ratios: list[float]
    surrogates: list[float]
    kls: list[float]
    objective: float
    zero_variance: bool
    notes: list[str] = field(default_factory=list)


def audit_group(group: RolloutGroup, kl_reduction: str = "mean") -> GroupAudit:
    """Recompute every per-group quantity; raises on invariant violations."""
    problems = group.violations()
    if problems:
        raise ValueError(
            f"group {group.question_id}: " + "; ".join(problems)
        )
    rewards = [r.reward for r in group.rollouts]
    advantages = group_advantages(rewards)
    ratios = [
        importance_ratio(math.fsum(r.policy_logprobs), math.fsum(r.old_logprobs))
        for r in group.rollouts
    ]
    surrogates = [
        clipped_surrogate(ratio, adv, group.epsilon)
        for ratio, adv in zip(ratios, advantages)
    ]
    kls = [
        kl_penalty(r.policy_logprobs, r.ref_logprobs, kl_reduction)
        for r in group.rollouts
    ]
    objective = math.fsum(
        s - group.beta * k for s, k in zip(surrogates, kls)
    ) / group.size
    zero_variance = all(a == 0.0 for a in advantages)
    notes = ["zero-variance rewards: all advantages are 0"] if zero_variance else []
    return GroupAudit(
        question_id=group.question_id,
        advantages=advantages,
        ratios=ratios,
        surrogates=surrogates,
        kls=kls,
        objective=objective,
        zero_variance=zero_variance,
        notes=notes,
    )


def grpo_objective(group: RolloutGroup, kl_reduction: str = "mean") -> float:
    """Mean over the group of clipped surrogate minus beta times KL."""
    return audit_group(group, kl_reduction).objective


# --- JSON-Lines loading -------------------------------------------------

def rollout_group_from_dict(d: dict) -> RolloutGroup:
    return RolloutGroup(
        question_id=str(d["question_id"]),
        epsilon=float(d["epsilon"]),
        beta=float(d["beta"]),
        rollouts=tuple(
            Rollout(
                response_text=r.get("response_text", ""),
                reward=float(r["reward"]),
                policy_logprobs=tuple(float(x) for x in r["policy_logprobs"]),
                old_logprobs=tuple(float(x) for x in r["old_logprobs"]),
                ref_logprobs=tuple(float(x) for x in r["ref_logprobs"]),
            )
            for r in d["rollouts"]
        ),
    )


def rollout_group_to_dict(group: RolloutGroup) -> dict:
    return {
        "question_id": group.question_id,
        "epsilon": group.epsilon,
        "beta": group.beta,
        "rollouts": [
            {
                "response_text": r.response_text,
                "reward": r.reward,
                "policy_logprobs": list(r.policy_logprobs),
                "old_logprobs": list(r.old_logprobs),
                "ref_logprobs": list(r.ref_logprobs),
            }
            for r in group.rollouts
        ],
    }


def load_rollout_groups(path) -> list[RolloutGroup]:
    groups = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                groups.append(rollout_group_from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad rollout group: {exc}") from exc
    return groups
