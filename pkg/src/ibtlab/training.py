"""Supervised training, iterative back-translation and its BT / OTF ablations."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import UNK, ConfigError

log = logging.getLogger(__name__)


@dataclass
class IbtConfig:
    K: int = 5000
    total_iterations: int = 35000
    batch_size_parallel: int = 64
    batch_size_mono: int = 64
    seed: int = 0
    bucket_pool: int = 20  # batches per length-sorted pool; 0 disables bucketing
    track_every: int = 0  # quality-curve cadence in steps; 0 disables tracking

    def __post_init__(self):
        if not 0 <= self.K < self.total_iterations:
            raise ConfigError(f"need 0 <= K < total_iterations, got K={self.K}, N={self.total_iterations}")
        if self.batch_size_parallel < 1 or self.batch_size_mono < 1:
            raise ConfigError("batch sizes must be positive")

    @property
    def N(self):
        return self.total_iterations


@dataclass
class TrainLogEntry:
    step: int
    direction: str
    data_kind: str
    loss: float
    wall_time: float

    def key(self):
        return (self.step, self.direction, self.data_kind, self.loss)


@dataclass
class PseudoBatch:
    pairs: list
    origin: str  # "from_trg_mono" (B_p) or "from_src_mono" (B_p')
    generation_step: int
    ids: list = field(default_factory=list)


def write_log_csv(entries, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "direction", "data_kind", "loss", "wall_time"])
        for e in entries:
            w.writerow([e.step, e.direction, e.data_kind, repr(e.loss), f"{e.wall_time:.3f}"])


class EpochSampler:
    """Index batches that visit every item exactly once per epoch.

    Each epoch is a fresh permutation. With ``lengths`` given, the permutation is
    cut into pools of ``pool`` batches that are sorted by length before batching,
    and the batch order is then shuffled (bucketing keeps padding small).
    """

    def __init__(self, n, batch_size, rng, lengths=None, pool=20):
        if n < 1:
            raise ValueError("cannot sample from an empty corpus")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.lengths = None if lengths is None else np.asarray(lengths)
        self.pool = pool
        self.epoch = 0
        self._queue = []

    def _fill(self):
        perm = self.rng.permutation(self.n)
        bs = self.batch_size
        if self.lengths is None or self.pool <= 0:
            batches = [perm[i:i + bs] for i in range(0, self.n, bs)]
        else:
            batches = []
            span = bs * self.pool
            for i in range(0, self.n, span):
                chunk = perm[i:i + span]
                chunk = chunk[np.argsort(self.lengths[chunk], kind="stable")]
                batches.extend(chunk[j:j + bs] for j in range(0, len(chunk), bs))
            order = self.rng.permutation(len(batches))
            batches = [batches[k] for k in order]
        self._queue = batches[::-1]
        self.epoch += 1

    def next(self):
        if not self._queue:
            self._fill()
        return self._queue.pop().tolist()


def _sides(pairs, direction):
    if direction == "src2trg":
        return [(p.source, p.target) for p in pairs]
    return [(p.target, p.source) for p in pairs]


class TrainingRun:
    """Mutable state shared by every schedule: the two models, samplers, RNG
    streams, the step counter and the log."""

    def __init__(self, m_fwd, m_bwd, parallel, config, mono=None, record_seen=False):
        if not parallel:
            raise ValueError("parallel data D_p is empty")
        self.models = {"src2trg": m_fwd, "trg2src": m_bwd}
        self.config = config
        self.parallel = parallel
        self.mono = mono
        ss = np.random.SeedSequence(config.seed)
        names = ["par_fwd", "par_bwd", "drop_fwd", "drop_bwd", "mono_src", "mono_trg", "misc"]
        self.rngs = dict(zip(names, (np.random.default_rng(s) for s in ss.spawn(len(names)))))
        self.par = {
            d: EpochSampler(len(parallel), config.batch_size_parallel, self.rngs["par_fwd" if d == "src2trg" else "par_bwd"],
                            [len(p.target if d == "src2trg" else p.source) for p in parallel],
                            config.bucket_pool)
            for d in ("src2trg", "trg2src")
        }
        self.mono_samplers = {}
        self.step = 0
        self.log = []
        self.t0 = time.perf_counter()
        self.seen = set() if record_seen else None
        self.generations = {}  # (side, mono index) -> set of generated sequences
        self.curve = []
        self.tracker = None

    # ------------------------------------------------------------ primitives

    def _dropout_rng(self, direction):
        return self.rngs["drop_fwd" if direction == "src2trg" else "drop_bwd"]

    def update(self, direction, pairs, kind):
        """One optimizer step of ``direction`` on (input, output) token tuples."""
        if self.seen is not None:
            # real data only: for pseudo pairs the input side is model output
            for s, t in pairs:
                if kind == "parallel":
                    self.seen.add(s)
                self.seen.add(t)
        loss = self.models[direction].train_batch(pairs, self._dropout_rng(direction))
        self.log.append(TrainLogEntry(self.step, direction, kind, loss, time.perf_counter() - self.t0))
        return loss

    def parallel_update(self, direction):
        idx = self.par[direction].next()
        return self.update(direction, _sides([self.parallel[i] for i in idx], direction), "parallel")

    def set_mono(self, src_side, trg_side):
        """(Re)build mono samplers; a side whose contents are unchanged keeps its sampler."""
        for side, seqs in (("src", src_side), ("trg", trg_side)):
            if seqs is None:
                continue
            if not seqs:
                raise ConfigError(f"{side}-side monolingual corpus is empty")
            old = self.mono_samplers.get(side)
            if old is not None and old[0] == seqs:
                continue
            sampler = EpochSampler(len(seqs), self.config.batch_size_mono, self.rngs[f"mono_{side}"],
                                   [len(s) for s in seqs], self.config.bucket_pool)
            self.mono_samplers[side] = (list(seqs), sampler)

    def pseudo_batch(self, side):
        """Sample from one mono side and translate it with the matching model."""
        seqs, sampler = self.mono_samplers[side]
        idx = sampler.next()
        batch = [seqs[i] for i in idx]
        if side == "trg":
            pb = generate_pseudo_batch(self.models["trg2src"], batch, "trg2src", self.step)
        else:
            pb = generate_pseudo_batch(self.models["src2trg"], batch, "src2trg", self.step)
        pb.ids = idx
        for i, (s, t) in zip(idx, pb.pairs):
            gen = s if side == "trg" else t
            self.generations.setdefault((side, i), set()).add(gen)
        return pb

    def maybe_track(self):
        if self.tracker is not None and self.config.track_every and self.step % self.config.track_every == 0:
            self.curve.append(self.tracker(self.step))

    # ------------------------------------------------------------ schedules

    def initial_stage(self, steps=None, directions=("src2trg", "trg2src")):
        """Supervised-only steps on D_p (one update per listed model per step)."""
        steps = self.config.K if steps is None else steps
        for _ in range(steps):
            self.step += 1
            for d in directions:
                self.parallel_update(d)
            self.maybe_track()

    def ibt_iterations(self, n_steps, train_bwd_on_pseudo=True, train_fwd_on_pseudo=True):
        """Iterative back-translation iterations on the current mono samplers.

        With one of the ``train_*_on_pseudo`` flags off this is the matching
        on-the-fly ablation: that model only sees D_p and the other side's mono
        data is never sampled.
        """
        fwd, bwd = "src2trg", "trg2src"
        for _ in range(n_steps):
            self.step += 1
            bp = self.pseudo_batch("trg") if train_fwd_on_pseudo else None
            bp2 = self.pseudo_batch("src") if train_bwd_on_pseudo else None
            self.parallel_update(fwd)
            if bp is not None:
                self.update(fwd, _trainable(bp.pairs, "src2trg"), "pseudo")
            self.parallel_update(bwd)
            if bp2 is not None:
                self.update(bwd, _trainable([(t, s) for s, t in bp2.pairs], "trg2src"), "pseudo")
            self.maybe_track()


def _trainable(pairs, direction):
    """Pairs in (input, output) order with generated inputs made encodable.

    An empty generated input is replaced by a single UNK token; generated outputs
    may be empty (the model is then taught to emit EOS straight away).
    """
    return [(s if s else (UNK,), t) for s, t in pairs]


def generate_pseudo_batch(dual_model, mono_batch, direction, step=0):
    """Greedy translations of ``mono_batch`` by ``dual_model`` as a PseudoBatch.

    ``direction`` is the dual model's direction: trg2src produces (ŝ, t) pairs from
    target-side text, src2trg produces (s, t̂) pairs from source-side text.
    """
    if dual_model.direction != direction:
        raise ValueError(f"model direction {dual_model.direction} != {direction}")
    limit = dual_model.config.max_decode_len - 1
    gens = [r.tokens[:limit] for r in dual_model.greedy_decode_batch(list(mono_batch))] if mono_batch else []
    if direction == "trg2src":
        pairs = [(g, tuple(t)) for g, t in zip(gens, mono_batch)]
        origin = "from_trg_mono"
    else:
        pairs = [(tuple(s), g) for s, g in zip(mono_batch, gens)]
        origin = "from_src_mono"
    return PseudoBatch(pairs, origin, step)


# ---------------------------------------------------------------- public API

def train_supervised(m_fwd, parallel, config, m_bwd=None, run=None):
    """Baseline: ``config.total_iterations`` supervised steps on D_p only."""
    run = run or TrainingRun(m_fwd, m_bwd, parallel, config)
    dirs = ("src2trg",) if m_bwd is None else ("src2trg", "trg2src")
    run.initial_stage(config.total_iterations, dirs)
    return run


def _check_mono(mono, need_src=True, need_trg=True):
    if mono is None:
        raise ConfigError("monolingual data required")
    if need_src and not mono.src_side:
        raise ConfigError("source-side monolingual data is empty; use the BT ablations instead")
    if need_trg and not mono.trg_side:
        raise ConfigError("target-side monolingual data is empty; use the BT ablations instead")


def run_ibt(m_fwd, m_bwd, parallel, mono, config, pretrained=False, run=None):
    """Iterative back-translation: K supervised steps (unless ``pretrained``) then
    N - K iterations of generate-both-ways plus four updates."""
    _check_mono(mono)
    run = run or TrainingRun(m_fwd, m_bwd, parallel, config, mono)
    if not pretrained:
        run.initial_stage()
    run.set_mono(mono.src_side, mono.trg_side)
    run.ibt_iterations(config.total_iterations - run.step)
    return run


def run_bt(direction, m_fwd, m_bwd, parallel, mono, config, pretrained=False, run=None):
    """Standard back-translation for one direction.

    Both models are trained on D_p, the frozen dual translates the whole opposite
    mono side once, then the target model is tuned on the shuffled union of D_p
    and that pseudo corpus with two updates per remaining step (the same number of
    updates that model gets under IBT).
    """
    side = "trg" if direction == "src2trg" else "src"
    _check_mono(mono, need_src=side == "src", need_trg=side == "trg")
    run = run or TrainingRun(m_fwd, m_bwd, parallel, config, mono)
    if not pretrained:
        run.initial_stage()
    dual_dir = "trg2src" if direction == "src2trg" else "src2trg"
    dual = run.models[dual_dir]
    seqs = mono.trg_side if side == "trg" else mono.src_side
    pseudo = []
    for i in range(0, len(seqs), 256):
        pseudo.extend(generate_pseudo_batch(dual, seqs[i:i + 256], dual_dir, run.step).pairs)
    for i, (s, t) in enumerate(pseudo):
        run.generations.setdefault((side, i), set()).add(s if side == "trg" else t)
    run.pseudo_corpus = pseudo
    if direction == "src2trg":
        union = [(p.source, p.target) for p in run.parallel] + _trainable(pseudo, "src2trg")
        kinds = ["parallel"] * len(run.parallel) + ["pseudo"] * len(pseudo)
    else:
        union = [(p.target, p.source) for p in run.parallel] + _trainable([(t, s) for s, t in pseudo], "trg2src")
        kinds = ["parallel"] * len(run.parallel) + ["pseudo"] * len(pseudo)
    sampler = EpochSampler(len(union), config.batch_size_parallel, run.rngs["misc"],
                           [len(t) for _, t in union], config.bucket_pool)
    for _ in range(config.total_iterations - run.step):
        run.step += 1
        for _ in range(2):
            idx = sampler.next()
            kind = "pseudo" if any(kinds[i] == "pseudo" for i in idx) else "parallel"
            run.update(direction, [union[i] for i in idx], kind)
        run.maybe_track()
    return run


def run_bt_otf(direction, m_fwd, m_bwd, parallel, mono, config, pretrained=False, run=None):
    """IBT without the dual model ever training on pseudo data (BT-*-with-OTF)."""
    side = "trg" if direction == "src2trg" else "src"
    _check_mono(mono, need_src=side == "src", need_trg=side == "trg")
    run = run or TrainingRun(m_fwd, m_bwd, parallel, config, mono)
    if not pretrained:
        run.initial_stage()
    if side == "trg":
        run.set_mono(None, mono.trg_side)
        run.ibt_iterations(config.total_iterations - run.step, train_bwd_on_pseudo=False)
    else:
        run.set_mono(mono.src_side, None)
        run.ibt_iterations(config.total_iterations - run.step, train_fwd_on_pseudo=False)
    return run
