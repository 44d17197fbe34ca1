"""The reward rubric and group-relative math, end to end on one step.

Run:  python demos/02_reward_and_grpo_math.py
"""

from guiagent import fixtures
from guiagent.actions import open_app, render_response
from guiagent.datalab import (
    StepSample,
    evaluate_group,
    group_advantages,
    score_response,
)
from guiagent.simenv import SimEnv

env = SimEnv(fixtures.scenario("phone"))
snapshot = env.reset("open_clock")
sample = StepSample(
    instruction="Open the Clock app",
    history=(),
    snapshot=snapshot,
    gold=open_app("Clock"),
)

candidates = {
    "well-formed, correct": render_response(
        "The app opens by name.", "Opened the Clock app.", open_app("Clock")),
    "well-formed, wrong app": render_response(
        "Notes should work.", "Opened the Notes app.", open_app("Notes")),
    "formatting broken": "sure! {\"action\": \"open\"}",
}

rewards = []
for label, raw in candidates.items():
    b = score_response(raw, sample)
    rewards.append(b.r_final)
    print(f"{label:<24} r_fmt={b.r_fmt} r_type={b.r_type} r_params={b.r_params} "
          f"r_acc={b.r_acc} r_final={b.r_final:.1f}")

print("\ngroup advantages:", [round(a, 4) for a in group_advantages(rewards)])

# Scalar objective for the group, pretending the policy moved a little.
evaluation = evaluate_group(
    rewards,
    ratios=[1.1, 0.9, 1.4],
    ref_ratios=[1.0, 1.05, 0.95],
    epsilon=0.2,
    beta=0.04,
)
print(f"clipped objective (eps=0.2, beta=0.04): {evaluation.objective:.6f}")
