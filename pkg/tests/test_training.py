import math
from itertools import combinations

import numpy as np
import pytest
from conftest import toy_graph, toy_model

from hyperrna import checkpoint
from hyperrna.errors import EmptyInput, LengthMismatch, NonFiniteLoss, ShapeMismatch
from hyperrna.gradcheck import gradcheck
from hyperrna.tensor import Tensor
from hyperrna.training import (
    DatasetSplit,
    TrainConfig,
    alignment_identity,
    cluster_split,
    log_to_csv,
    sequence_loss,
    structure_loss,
    total_loss,
    train,
)

# ---------------------------------------------------------------- losses


def test_perfect_prediction_zero_loss():
    logits = np.full((3, 4), -800.0)
    logits[[0, 1, 2], [1, 2, 3]] = 800.0
    assert sequence_loss("GCU", logits).item() == 0.0


def test_uniform_prediction():
    assert sequence_loss("ACGUA", np.zeros((5, 4))).item() == pytest.approx(5 * math.log(4), rel=1e-14)
    assert sequence_loss("ACGUA", np.zeros((5, 4)), mean=True).item() == pytest.approx(math.log(4), rel=1e-14)


def test_sequence_loss_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.normal(size=(5, 4)) * 3
        seq = "".join(rng.choice(list("AGCU"), 5))
        ref = 0.0
        for i, c in enumerate(seq):
            row = logits[i]
            z = sum(math.exp(x) for x in row)
            ref -= math.log(math.exp(row["AGCU".index(c)]) / z)
        assert sequence_loss(seq, logits).item() == pytest.approx(ref, rel=1e-12)


def test_sequence_loss_length_mismatch():
    with pytest.raises(LengthMismatch):
        sequence_loss("ACG", np.zeros((4, 4)))


def test_structure_loss_cases():
    x = np.random.default_rng(1).normal(size=(6, 3))
    assert structure_loss(x, x).item() == 0.0
    assert structure_loss(x, x + 1.0).item() == pytest.approx(1.0, rel=1e-14)
    y = np.random.default_rng(2).normal(size=(6, 3))
    ref = sum((y[i, j] - x[i, j]) ** 2 for i in range(6) for j in range(3)) / 18
    assert structure_loss(x, y).item() == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        structure_loss(x, y[:5])


def test_total_loss():
    loss, flag = total_loss(2.0, 3.0, 1.0)
    assert loss.item() == 5.0 and flag
    loss, flag = total_loss(2.0, 3.0, 0.0)
    assert loss.item() == 2.0
    loss, flag = total_loss(2.0, None)
    assert loss.item() == 2.0 and not flag


def test_total_loss_gradient_only_through_sequence():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    true_c, pred_c = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))

    def loss():
        return total_loss(sequence_loss("AGCU", logits), structure_loss(true_c, pred_c), 0.5)[0]

    assert gradcheck(loss, [logits]) <= 1e-4


# ---------------------------------------------------------------- splitting


def test_identity_examples():
    assert alignment_identity("ACGU", "ACGU") == 1.0
    assert alignment_identity("ACGU", "UGCA") == 0.25
    assert alignment_identity("ACGU", "AGU") == 1.0  # shorter one embeds fully


def lcs_bruteforce(a, b):
    """Length of the longest subsequence of b that also occurs in a."""
    for r in range(len(b), 0, -1):
        for s in {"".join(c) for c in combinations(b, r)}:
            it = iter(a)
            if all(ch in it for ch in s):
                return r
    return 0


def test_identity_matches_bruteforce():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = "".join(rng.choice(list("ACGU"), rng.integers(1, 9)))
        b = "".join(rng.choice(list("ACGU"), rng.integers(1, 9)))
        short = min(len(a), len(b))
        assert alignment_identity(a, b) == lcs_bruteforce(a, b) / short


def test_identical_sequences_share_cluster():
    split = cluster_split([("a", "ACGUACGU"), ("b", "ACGUACGU")], ratios=(0.5, 0.25, 0.25))
    assert split.cluster["a"] == split.cluster["b"]
    assert split.split_of("a") == split.split_of("b")


def test_dissimilar_sequences_separate():
    split = cluster_split([("a", "ACGU"), ("b", "UGCA")])
    assert split.cluster["a"] != split.cluster["b"]


def test_split_partition_and_representatives():
    rng = np.random.default_rng(5)
    recs = [(f"s{i}", "".join(rng.choice(list("ACGU"), rng.integers(10, 30)))) for i in range(100)]
    split = cluster_split(recs, 0.8, (0.8, 0.1, 0.1), seed=3)
    all_ids = split.train + split.val + split.test
    assert sorted(all_ids) == sorted(r[0] for r in recs)
    assert len(set(all_ids)) == 100
    seqs = dict(recs)
    for item, cid in split.cluster.items():
        assert alignment_identity(seqs[item], seqs[split.representative[cid]]) >= 0.8
    where = {}
    for item in all_ids:
        where.setdefault(split.cluster[item], set()).add(split.split_of(item))
    assert all(len(s) == 1 for s in where.values())


def test_split_is_seeded():
    rng = np.random.default_rng(6)
    recs = [(f"s{i}", "".join(rng.choice(list("ACGU"), 20))) for i in range(30)]
    assert cluster_split(recs, seed=1).to_text() == cluster_split(recs, seed=1).to_text()


def test_split_roundtrip_text():
    split = cluster_split([(f"s{i}", s) for i, s in enumerate(["AAAA", "CCCC", "GGGG", "UUUU"])])
    back = DatasetSplit.from_text(split.to_text())
    assert (back.train, back.val, back.test) == (split.train, split.val, split.test)
    assert back.cluster == split.cluster


def test_split_errors():
    with pytest.raises(EmptyInput):
        cluster_split([])
    with pytest.raises(ValueError):
        cluster_split([("a", "ACGU"), ("a", "GGGG")])
    with pytest.raises(ValueError):
        cluster_split([("a", "ACGU")], ratios=(0.5, 0.2, 0.2))


# ---------------------------------------------------------------- config


def test_config_text_roundtrip():
    cfg = TrainConfig(epochs=7, lr=3e-3, conv="symmetric", mean_seq_loss=True)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    assert TrainConfig.from_text(cfg.to_text(), epochs=2).epochs == 2
    with pytest.raises(ValueError):
        TrainConfig.from_text("bogus=1\n")
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)


# ---------------------------------------------------------------- training loop


def test_zero_lr_is_noop():
    g = toy_graph(1)
    m = toy_model(1, dropout=0.1)
    before = {k: p.values.tobytes() for k, p in m.params.items()}
    train([("a", g)], TrainConfig(epochs=3, lr=0.0, seed=0), model=m)
    assert all(p.values.tobytes() == before[k] for k, p in m.params.items())


def test_training_is_deterministic():
    g1, g2 = toy_graph(2), toy_graph(3)
    runs = []
    for _ in range(2):
        _, m, logs = train([("a", g1), ("b", g2)], TrainConfig(epochs=2, lr=1e-3, seed=4),
                           val_set=[("b", g2)], model=toy_model(4, dropout=0.1))
        runs.append((log_to_csv(logs, include_wall=False), {k: p.values.tobytes() for k, p in m.params.items()}))
    assert runs[0] == runs[1]


def test_single_structure_overfits():
    g = toy_graph(5, n_rna=10)
    _, m, logs = train([("a", g)], TrainConfig(epochs=60, lr=1e-2, seed=0), model=toy_model(5))
    L = len(g.rna_sequence)
    assert logs[-1].train_ce * L < 0.05 * L * math.log(4)
    assert logs[-1].train_ce < logs[0].train_ce


def test_best_checkpoint_and_roundtrip(tmp_path):
    g1, g2 = toy_graph(6), toy_graph(7)
    ckpt, _, logs = train([("a", g1)], TrainConfig(epochs=3, lr=1e-3), val_set=[("b", g2)], model=toy_model(6))
    best = min(logs, key=lambda e: e.val_ce).epoch
    assert ckpt.meta["best_epoch"] == best
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, ckpt)
    back = checkpoint.load(path)
    assert back.meta == ckpt.meta
    for k, p in ckpt.params.items():
        assert back.params[k].values.tobytes() == p.values.tobytes()
    assert checkpoint.dumps(back) == checkpoint.dumps(ckpt)


def test_structure_term_enters_loss():
    g = toy_graph(8)
    n = len(g.rna_sequence)
    coords = {"a": (np.zeros((n, 3)), np.ones((n, 3)))}
    base = train([("a", g)], TrainConfig(epochs=1, lr=0.0, dropout=0.0), model=toy_model(8))[2]
    with_str = train([("a", g)], TrainConfig(epochs=1, lr=0.0, dropout=0.0), pred_coords=coords, model=toy_model(8))[2]
    assert base[0].train_ce == with_str[0].train_ce  # logged CE excludes the structure term


def test_nonfinite_loss_names_structure():
    g = toy_graph(9)
    m = toy_model(9)
    m.params["dec.b_out"].values[...] = np.nan
    with pytest.raises(NonFiniteLoss, match="bad"):
        train([("bad", g)], TrainConfig(epochs=1), model=m)


def test_empty_training_set():
    with pytest.raises(EmptyInput):
        train([], TrainConfig(epochs=1))


def test_log_csv_columns():
    _, _, logs = train([("a", toy_graph())], TrainConfig(epochs=2, lr=1e-3), model=toy_model())
    text = log_to_csv(logs)
    assert text.splitlines()[0] == "epoch,train_ce,val_ce,val_recovery,wall_seconds"
    assert len(text.splitlines()) == 3
