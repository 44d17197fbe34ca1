"""Tour of the simulated mobile environment: screens, actions, determinism.

Run:  python demos/01_simulated_environment.py
"""

from guiagent import fixtures
from guiagent.actions import click, open_app, swipe, terminate
from guiagent.simenv import SimEnv, run_actions

scenario = fixtures.scenario("bench")
env = SimEnv(scenario)
snapshot = env.reset("t06_play_last", seed=11)
print(f"reset -> {snapshot.app}:{snapshot.screen_id} "
      f"({len(snapshot.widgets)} widgets, {snapshot.screen_width}x{snapshot.screen_height})")

for action in [open_app("Music"), swipe(540, 1500, 540, 500), click(540, 900)]:
    snapshot, outcome = env.step(action)
    labels = ", ".join(w.text for w in snapshot.widgets if w.text)
    print(f"step {snapshot.step_index}: {action.kind:<10} -> "
          f"{snapshot.app}:{snapshot.screen_id} [{labels}]  outcome={outcome.status}")

snapshot, outcome = env.step(terminate("success"))
print(f"terminated: {outcome.status} ({outcome.reason})")

# The whole run is reproducible bit for bit: same inputs, same log hash.
actions = [open_app("Music"), swipe(540, 1500, 540, 500), click(540, 900), terminate("success")]
env_a, _ = run_actions(scenario, "t06_play_last", 11, actions)
env_b, _ = run_actions(scenario, "t06_play_last", 11, actions)
print(f"log hash A: {env_a.log_hash()[:16]}...")
print(f"log hash B: {env_b.log_hash()[:16]}...")
assert env_a.log_hash() == env_b.log_hash()
print("deterministic: identical trajectory log hashes")
