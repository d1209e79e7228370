"""Baseline vs IBT on ADD_JUMP with a tiny budget.

Small enough to finish in a few minutes on one core, so the numbers are far
from converged; the point is to see the pieces (pseudo batches, quality curve,
run directory) in action. Pass --full for the acceptance-sized runs.
"""
import json
import sys
from pathlib import Path

from ibtlab import run_experiment

here = Path(__file__).parent
full = "--full" in sys.argv
overrides = {} if full else {
    "model": {"preset": "desk", "embed_dim": 32, "hidden_dim": 32},
    "ibt": {"K": 300, "total_iterations": 600, "track_every": 100},
    "seeds": [0],
}

for name in ("baseline_add_jump.json", "ibt_add_jump_mono30.json"):
    cfg = json.loads((here / "configs" / name).read_text())
    cfg.update(overrides)
    if cfg["method"] == "baseline" and not full:
        cfg["ibt"] = {"K": 0, "total_iterations": 600}
    cfg["output_dir"] = str(here / "runs")
    report = run_experiment(cfg)
    print(report.summary())
    print("  ->", report.run_dir)
