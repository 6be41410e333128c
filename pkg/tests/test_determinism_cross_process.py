"""Determinism across interpreter processes (hash randomization and all)."""

import json
import subprocess
import sys

SCRIPT = """
import json
from tdmlink.sim import SimConfig, run_scenario

cfg = SimConfig(
    num_frontends=3, seed=31, abstraction="message_level",
    trigger_mode="gated", trigger_count=12,
    channels_per_event=3, words_per_channel=4,
    faults=[{"type": "corrupt_fragment", "link": 2, "event": 4, "channel": 0}],
)
res = run_scenario(cfg)
print(json.dumps({"digest": res.client_digest(), "metrics": res.metrics.to_json_lines()}))
"""


def run_once(hashseed):
    out = subprocess.run(
        [sys.executable, "-c", SCRIPT],
        capture_output=True,
        text=True,
        env={"PYTHONHASHSEED": hashseed, "PATH": "/usr/bin:/bin"},
        check=True,
    )
    return json.loads(out.stdout)


def test_byte_identical_across_processes_and_hash_seeds():
    runs = [run_once(seed) for seed in ("0", "12345", "999")]
    assert runs[0] == runs[1] == runs[2]
