import math

import numpy as np
import pytest

from ibtlab.data import Pair, Vocab, build_split, scan_generate_all
from ibtlab.metrics import exact_match_accuracy
from ibtlab.model import ModelConfig, Seq2Seq
from gradcheck import numeric_grad, rel_err


@pytest.fixture(scope="module")
def universe():
    return scan_generate_all()


@pytest.fixture(scope="module")
def vocabs(universe):
    return Vocab.build(p.source for p in universe), Vocab.build(p.target for p in universe)


def small(vocabs, seed=0, **kw):
    cfg = ModelConfig(**{"embed_dim": 16, "hidden_dim": 16, "dropout_rate": 0.0, **kw})
    return Seq2Seq(cfg, *vocabs, rng=np.random.default_rng(seed))


def test_encode_shapes(vocabs):
    m = small(vocabs)
    ids, mask = m.source_ids([("jump",)])
    ann, finals = m.encode(ids, mask)
    assert ann.shape == (1, 1, 16)
    assert len(finals) == 2 and finals[0].shape == (1, 16)


def test_encode_batch_permutation(vocabs):
    m = small(vocabs)
    srcs = [("walk", "twice"), ("jump",), ("look", "left", "and", "run")]
    ann, _ = m.encode(*m.source_ids(srcs))
    perm = [2, 0, 1]
    ann_p, _ = m.encode(*m.source_ids([srcs[i] for i in perm]))
    np.testing.assert_allclose(ann_p.data, ann.data[perm], rtol=1e-6, atol=1e-7)


def test_padding_does_not_change_real_positions(vocabs):
    m = small(vocabs)
    src = ("walk", "left", "twice")
    ann, finals = m.encode(*m.source_ids([src]))
    ids = np.array([m.src_vocab.encode(src) + [0, 0, 0]])
    ann_pad, finals_pad = m.encode(ids, ids != 0)
    np.testing.assert_allclose(ann_pad.data[:, :3], ann.data, rtol=1e-6, atol=1e-7)
    for a, b in zip(finals, finals_pad):
        np.testing.assert_allclose(a.data, b.data, rtol=1e-6, atol=1e-7)


def test_encode_rejects_bad_ids(vocabs):
    m = small(vocabs)
    with pytest.raises(IndexError):
        m.encode(np.array([[len(m.src_vocab)]]))


def test_initial_loss_is_near_uniform(vocabs, universe):
    m = small(vocabs, dropout_rate=0.5)
    batch = universe[::500]
    loss = m.train_batch(batch, np.random.default_rng(0))
    expected = math.log(len(m.trg_vocab))
    assert abs(loss - expected) <= 0.1 * expected


def test_train_batch_deterministic(vocabs, universe):
    batch = universe[::700]
    a = small(vocabs, seed=3, dropout_rate=0.5)
    b = small(vocabs, seed=3, dropout_rate=0.5)
    la = [a.train_batch(batch, np.random.default_rng(1)) for _ in range(3)]
    lb = [b.train_batch(batch, np.random.default_rng(1)) for _ in range(3)]
    assert la == lb
    assert a.state_hash() == b.state_hash()


def test_train_batch_errors(vocabs):
    m = small(vocabs, max_decode_len=4)
    with pytest.raises(ValueError):
        m.train_batch([], np.random.default_rng(0))
    with pytest.raises(ValueError, match="max_decode_len"):
        m.train_batch([Pair("jump thrice", "JUMP JUMP JUMP JUMP")], np.random.default_rng(0))


def test_overfit_single_pair(vocabs):
    m = small(vocabs, seed=1)
    pair = [Pair("jump", "JUMP")]
    rng = np.random.default_rng(0)
    for _ in range(3000):
        loss = m.train_batch(pair, rng)
        if loss < 0.01:
            break
    assert loss < 0.01
    assert m.greedy_decode(("jump",)).tokens == ("JUMP",)
    assert not m.greedy_decode(("jump",)).truncated


def test_decode_is_deterministic_and_bounded(vocabs, universe):
    m = small(vocabs, max_decode_len=7)
    srcs = [p.source for p in universe[::1500]]
    a = m.greedy_decode_batch(srcs)
    b = m.greedy_decode_batch(srcs)
    assert a == b
    for r in a:
        assert len(r.tokens) <= 7
        assert r.truncated == (len(r.tokens) == 7) or not r.truncated
        assert not {"<pad>", "<s>"} & set(r.tokens)


def test_decode_maps_unknown_tokens(vocabs):
    m = small(vocabs)
    r = m.greedy_decode(("jump", "banana"))
    assert isinstance(r.tokens, tuple)


def test_attention_weights_sum_to_one(vocabs, universe):
    m = small(vocabs)
    srcs = [p.source for p in universe[::2000]]
    _, attn = m.greedy_decode_batch(srcs, return_attention=True)
    ids, mask = m.source_ids(srcs)
    for w in attn:
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-5)
        assert np.all(w[~mask] == 0)


def test_greedy_decode_matches_teacher_forced_argmax(vocabs, universe):
    m = small(vocabs, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(30):
        m.train_batch(universe[::300], rng)
    srcs = [p.source for p in universe[::1000]]
    outs = [r for r in m.greedy_decode_batch(srcs) if not r.truncated]
    m.eval()
    for src, r in zip(srcs, outs):
        ids, mask = m.source_ids([src])
        trg_in, _ = m.target_ids([r.tokens])
        logits = m.forward(ids, mask, trg_in).data[0]
        pred = logits.argmax(axis=1)
        assert m.trg_vocab.decode(pred[:-1]) == r.tokens
        assert pred[-1] == m.trg_vocab.eos


def test_eval_forward_is_dropout_free(vocabs):
    m = small(vocabs, dropout_rate=0.5).eval()
    ids, mask = m.source_ids([("walk", "twice")])
    trg_in, _ = m.target_ids([("WALK", "WALK")])
    a = m.forward(ids, mask, trg_in, rng=np.random.default_rng(0)).data
    b = m.forward(ids, mask, trg_in, rng=np.random.default_rng(1)).data
    np.testing.assert_array_equal(a, b)


def test_direction_tag_is_fixed(vocabs):
    m = small(vocabs)
    with pytest.raises(AttributeError):
        m.direction = "trg2src"
    with pytest.raises(ValueError):
        Seq2Seq(ModelConfig(), *vocabs, direction="sideways")


def test_full_loss_gradient_matches_finite_differences(vocabs):
    """One GRU+attention loss, every parameter, float64, 1e-4 relative error."""
    m = small(vocabs, seed=5, embed_dim=4, hidden_dim=3, dtype="float64", init_scale=0.5)
    batch = [Pair("walk left twice", "LTURN WALK LTURN WALK"), Pair("jump", "JUMP")]
    loss = m.loss(batch)
    loss.backward()
    names = sorted(m.params)
    arrays = [m.params[k].data.copy() for k in names]

    def f(*arrs):
        for k, a in zip(names, arrs):
            m.params[k].data = a
        return float(m.loss(batch).data)

    numeric = numeric_grad(f, arrays)
    for k, ng in zip(names, numeric):
        g = m.params[k].grad
        if not np.any(ng) and g is None:
            continue
        assert rel_err(g, ng) < 1e-4, (k, rel_err(g, ng))


def test_capacity_200_pairs(universe, vocabs):
    """>= 99% training accuracy on a random 200-pair SCAN subset within 2000 steps."""
    rng = np.random.default_rng(0)
    subset = [universe[i] for i in rng.choice(len(universe), 200, replace=False)]
    m = Seq2Seq(ModelConfig(embed_dim=64, hidden_dim=64, dropout_rate=0.0), *vocabs, rng=np.random.default_rng(0))
    order = np.random.default_rng(1)
    best = 0.0
    for step in range(1, 2001):
        idx = order.choice(200, 64, replace=False)
        m.train_batch([subset[i] for i in idx], order)
        if step % 250 == 0:
            preds = m.translate([p.source for p in subset])
            best = exact_match_accuracy(preds, [p.target for p in subset])
            if best >= 0.99:
                break
    assert best >= 0.99
