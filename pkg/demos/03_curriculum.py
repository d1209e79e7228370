"""How the curriculum cuts the LENGTH mono data, and what a short CIBT run logs."""
from collections import Counter

import numpy as np

from ibtlab import CurriculumSpec, IbtConfig, ModelConfig, Seq2Seq, Vocab, run_cibt
from ibtlab.curriculum import segment
from ibtlab.data import build_mono_setting, build_split, scan_generate_all

d = build_split(scan_generate_all(), "LENGTH", np.random.default_rng(0))
mono = build_mono_setting(d.dev, d.test, "mono100", np.random.default_rng(1))

parts = segment(mono.trg_side, "target_length", 6)
for k, part in enumerate(parts, 1):
    lens = [len(s) for s in part]
    print(f"part {k}: {len(part):4d} sequences, target length {min(lens)}..{max(lens)}")

spec = CurriculumSpec(n=6, c=20, strategy="target_length", total_budget=200)
cfg = IbtConfig(K=50, total_iterations=50 + spec.total_budget, seed=0)
mc = ModelConfig.preset("desk", embed_dim=16, hidden_dim=16)
sv = Vocab.build([p.source for p in d.train] + mono.src_side)
tv = Vocab.build([p.target for p in d.train] + mono.trg_side)
fwd = Seq2Seq(mc, sv, tv, "src2trg", rng=np.random.default_rng(1))
bwd = Seq2Seq(mc, tv, sv, "trg2src", rng=np.random.default_rng(2))
run = run_cibt(fwd, bwd, d.train, mono, spec, cfg)
print(Counter((e.direction, e.data_kind) for e in run.log))
print("stage boundaries:", run.stage_bounds)
