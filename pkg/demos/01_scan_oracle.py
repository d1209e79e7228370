"""Walk through the SCAN interpreter and the two splits used throughout."""
import numpy as np

from ibtlab.data import build_split, scan_generate_all, scan_interpret

for cmd in ["jump", "jump twice", "walk left after run opposite right", "look around left thrice and jump"]:
    print(f"{cmd:40s} -> {' '.join(scan_interpret(cmd.split()))}")

universe = scan_generate_all()
print(f"\n{len(universe)} commands in total")
for split in ("ADD_JUMP", "LENGTH"):
    d = build_split(universe, split, np.random.default_rng(0))
    print(f"{split:9s} train {len(d.train):5d}  dev {len(d.dev):5d}  test {len(d.test):5d}")

# the compositional gap: "jump" only ever appears alone in ADD_JUMP training data
d = build_split(universe, "ADD_JUMP", np.random.default_rng(0))
print([" ".join(p.source) for p in d.train if "jump" in p.source])
