import csv
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ibtlab.curriculum import (
    CurriculumSpec, count_entities, curriculum_index, evaluate_per_curriculum, run_cibt, segment,
    segment_corpus, write_curriculum_csv,
)
from ibtlab.data import ConfigError, MonoCorpus, Pair, Vocab, build_split, scan_generate_all
from ibtlab.metrics import exact_match_accuracy
from ibtlab.model import DecodeResult, ModelConfig, Seq2Seq
from ibtlab.training import IbtConfig, TrainingRun, run_ibt


class StubModel:
    """Stands in for Seq2Seq when only the schedule matters."""

    def __init__(self, direction):
        self.direction = direction
        self.config = SimpleNamespace(max_decode_len=64)
        self.updates = 0

    def train_batch(self, pairs, rng):
        self.updates += 1
        return 0.0

    def greedy_decode_batch(self, sources):
        return [DecodeResult(tuple(s), False) for s in sources]


def stub_run(config):
    parallel = [Pair("a b", "A B"), Pair("c", "C")]
    return TrainingRun(StubModel("src2trg"), StubModel("trg2src"), parallel, config)


def length_mono(n=60):
    rng = np.random.default_rng(0)
    src = [tuple("x" * int(k)) for k in rng.integers(1, 12, n)]
    trg = [tuple("Y" * int(k)) for k in rng.integers(1, 30, n)]
    return MonoCorpus(src, trg, "mono100")


# ---------------------------------------------------------------- entities

@pytest.mark.parametrize("seq, count", [
    ("Were M1 and M3 distributed by M0 's employer and distributed by M2 ?", 4),
    ("Who directed a film", 0),
    ("M0 M0 M0", 1),
    (("SELECT", "?x", "WHERE", "M5", "M9"), 2),
])
def test_count_entities(seq, count):
    assert count_entities(seq) == count


@pytest.mark.parametrize("k, part", [(0, 0), (1, 0), (2, 1), (4, 3), (5, 4), (6, 5), (9, 5)])
def test_entity_buckets(k, part):
    seq = " ".join(f"M{i}" for i in range(k)) or "no entities here"
    assert curriculum_index([seq], "entity_count", 6) == [part]


def test_entity_strategy_needs_six_parts():
    with pytest.raises(ConfigError):
        curriculum_index(["M0"], "entity_count", 4)
    with pytest.raises(ConfigError):
        CurriculumSpec(n=4, c=10, strategy="entity_count", total_budget=100)
    with pytest.raises(ConfigError):
        segment(["a"], "perplexity", 2)


def test_entity_alignment_on_cfq_style_pairs():
    rng = np.random.default_rng(1)
    pairs = []
    for _ in range(200):
        ents = [f"M{i}" for i in rng.choice(10, rng.integers(0, 8), replace=False)]
        q = "Did " + " and ".join(ents or ["someone"]) + " direct a film ?"
        sparql = "SELECT count(*) WHERE { " + " . ".join(f"?x0 directed_by {e}" for e in ents) + " }"
        pairs.append((q, sparql))
    src = curriculum_index([q for q, _ in pairs], "entity_count", 6)
    trg = curriculum_index([s for _, s in pairs], "entity_count", 6)
    assert src == trg


# ---------------------------------------------------------------- segmentation

@settings(max_examples=60, deadline=None)
@given(lengths=st.lists(st.integers(0, 40), min_size=0, max_size=80), n=st.integers(1, 8))
def test_length_segmentation_is_an_ordered_partition(lengths, n):
    seqs = [("t",) * k + (str(i),) for i, k in enumerate(lengths)]
    parts = segment(seqs, "target_length", n)
    assert len(parts) == n
    assert sorted(x for p in parts for x in p) == sorted(seqs)
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1
    nonempty = [p for p in parts if p]
    for a, b in zip(nonempty, nonempty[1:]):
        assert max(map(len, a)) <= min(map(len, b))
    for p in parts:
        assert p == [s for s in seqs if s in set(p)]


def test_length_ties_keep_input_order():
    seqs = [("a",), ("b",), ("c",), ("d",)]
    assert segment(seqs, "target_length", 2) == [[("a",), ("b",)], [("c",), ("d",)]]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=50))
def test_entity_segmentation_is_a_partition(counts):
    seqs = [" ".join([f"M{i}" for i in range(k)] + [f"q{j}"]) for j, k in enumerate(counts)]
    parts = segment(seqs, "entity_count", 6)
    assert sorted(x for p in parts for x in p) == sorted(seqs)
    for i, p in enumerate(parts):
        assert all(min(max(count_entities(s), 1), 6) == i + 1 for s in p)


# ---------------------------------------------------------------- schedule

def test_spec_continuation_steps():
    spec = CurriculumSpec(n=6, c=3000, strategy="entity_count", total_budget=25000)
    assert spec.continuation_steps == 7000
    with pytest.raises(ConfigError):
        CurriculumSpec(n=6, c=5000, strategy="entity_count", total_budget=25000)
    with pytest.raises(ConfigError):
        CurriculumSpec(n=2, c=0, strategy="target_length")


@pytest.mark.parametrize("c", [2000, 2500, 3000, 3500, 4000])
def test_cibt_schedule_exactness(c):
    spec = CurriculumSpec(n=6, c=c, strategy="target_length", total_budget=25000)
    cfg = IbtConfig(K=0, total_iterations=25001, batch_size_parallel=2, batch_size_mono=8)
    run = stub_run(cfg)
    run_cibt(run.models["src2trg"], run.models["trg2src"], run.parallel, length_mono(), spec, cfg,
             pretrained=True, run=run)
    assert run.step == 25000
    assert run.stage_bounds == [c * (t + 1) for t in range(6)]
    assert len(run.log) == 4 * 25000
    assert run.models["src2trg"].updates == run.models["trg2src"].updates == 2 * 25000
    staged = [e for e in run.log if e.step <= 6 * c]
    assert len(staged) == 4 * 6 * c
    assert len(run.log) - len(staged) == 4 * (25000 - 6 * c)


def test_cibt_releases_data_monotonically():
    spec = CurriculumSpec(n=4, c=3, strategy="target_length", total_budget=20)
    cfg = IbtConfig(K=0, total_iterations=21, batch_size_parallel=2, batch_size_mono=4)
    run = stub_run(cfg)
    released = []
    original = run.set_mono

    def spy(src, trg):
        released.append((set(src), set(trg)))
        original(src, trg)

    run.set_mono = spy
    mono = length_mono()
    run_cibt(None, None, run.parallel, mono, spec, cfg, pretrained=True, run=run)
    assert len(released) == 5
    for (s0, t0), (s1, t1) in zip(released, released[1:]):
        assert s0 <= s1 and t0 <= t1
    assert released[-1] == (set(mono.src_side), set(mono.trg_side))


def test_cibt_rejects_empty_first_stage():
    spec = CurriculumSpec(n=6, c=1, strategy="entity_count", total_budget=10)
    cfg = IbtConfig(K=0, total_iterations=11)
    mono = MonoCorpus(["M0 M1 M2 M3 M4 M5"], ["M0"], "mono100")
    run = stub_run(cfg)
    with pytest.raises(ConfigError):
        run_cibt(None, None, run.parallel, mono, spec, cfg, pretrained=True, run=run)


def test_cibt_with_one_curriculum_equals_ibt():
    universe = scan_generate_all()
    d = build_split(universe, "ADD_JUMP", np.random.default_rng(0))
    sv, tv = Vocab.build(p.source for p in universe), Vocab.build(p.target for p in universe)
    mono = MonoCorpus([p.source for p in d.dev[:30]], [p.target for p in d.dev[30:60]], "mono100")
    cfg = IbtConfig(K=3, total_iterations=12, batch_size_parallel=8, batch_size_mono=8, seed=2)
    spec = CurriculumSpec(n=1, c=4, strategy="target_length", total_budget=9)

    def fresh():
        mc = ModelConfig(embed_dim=12, hidden_dim=12, dropout_rate=0.3)
        return (Seq2Seq(mc, sv, tv, "src2trg", rng=np.random.default_rng(7)),
                Seq2Seq(mc, tv, sv, "trg2src", rng=np.random.default_rng(8)))

    a = run_ibt(*fresh(), d.train[:80], mono, cfg)
    b = run_cibt(*fresh(), d.train[:80], mono, spec, cfg)
    assert [e.key() for e in a.log] == [e.key() for e in b.log]
    for direction in a.models:
        assert a.models[direction].state_hash() == b.models[direction].state_hash()


# ---------------------------------------------------------------- evaluation

def test_evaluate_per_curriculum_nested_and_parts(tmp_path):
    universe = scan_generate_all()
    test = universe[::97]
    rng = np.random.default_rng(3)
    preds = [p.target if rng.random() < 0.5 else ("WALK",) for p in test]
    nested = evaluate_per_curriculum(None, test, "target_length", 4, predictions=preds)
    parts = evaluate_per_curriculum(None, test, "target_length", 4, nested=False, predictions=preds)
    assert [k for k, _, _ in nested] == [1, 2, 3, 4]
    sizes = [s for _, s, _ in nested]
    assert sizes == sorted(sizes) and sizes[-1] == len(test)
    assert nested[-1][2] == exact_match_accuracy(preds, [p.target for p in test])
    assert sum(s for _, s, _ in parts) == len(test)
    hits = sum(s * a for _, s, a in parts)
    assert hits == pytest.approx(nested[-1][2] * len(test))
    write_curriculum_csv(nested + [(5, 0, None)], tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["k", "subset_size", "accuracy"]
    assert rows[-1] == ["5", "0", ""]


def test_empty_subsets_are_undefined():
    test = [Pair("M0 M1 M2 x", "A"), Pair("M0 M1 M2 y", "B")]
    rows = evaluate_per_curriculum(None, test, "entity_count", 6, predictions=[("A",), ("C",)])
    assert rows[0] == (1, 0, None) and rows[1] == (2, 0, None)
    assert rows[2] == (3, 2, 0.5) and rows[5] == (6, 2, 0.5)


def test_segment_corpus_sides():
    mono = length_mono(30)
    seg = segment_corpus(mono, "target_length", 3)
    assert sum(map(len, seg.src_parts)) == sum(map(len, seg.trg_parts)) == 30
