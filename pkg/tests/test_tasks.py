import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import average_precision_score

from oracles import accuracy_oracle, aupr_oracle, fmax_oracle

from gearnet.encoder import EncoderConfig, GearNet
from gearnet.errors import BadTarget, EmptyDataset, NoPositives, SchemaError, ShapeMismatch
from gearnet.graph import build_graph
from gearnet.nn import SGD, Adam, ParameterStore
from gearnet.struct_io import DatasetRecord
from gearnet.synthetic import synthetic_structures
from gearnet.tasks import (PredictionTable, TaskHead, accuracy, aupr_pair, evaluate, fmax,
                           format_prediction_table, parse_prediction_table, predict,
                           read_prediction_table, task_target, train_task, write_prediction_table)


def random_table(rng, p=None, t=None, grid=False):
    p = p or int(rng.integers(1, 21))
    t = t or int(rng.integers(1, 11))
    scores = rng.random((p, t))
    if grid:
        scores = np.round(scores * 20) / 20  # ties and exact grid points
    truth = (rng.random((p, t)) < 0.4).astype(int)
    truth[rng.integers(0, p), rng.integers(0, t)] = 1
    return PredictionTable(scores, truth)


# ---------------------------------------------------------------- fmax

def test_fmax_perfect():
    truth = np.array([[1, 0, 1], [0, 1, 0]])
    assert fmax(PredictionTable(truth.astype(float), truth)) == 1.0


def test_fmax_all_zero_scores_is_all_positive_predictor():
    truth = np.array([[1, 0, 0, 0], [1, 1, 0, 0]])
    pt = PredictionTable(np.zeros((2, 4)), truth)
    precision = np.mean([1 / 4, 2 / 4])
    recall = 1.0
    assert abs(fmax(pt) - 2 * precision * recall / (precision + recall)) < 1e-12
    assert abs(fmax(pt) - fmax_oracle(pt.scores, pt.truth)) < 1e-12


def test_fmax_small_example():
    pt = PredictionTable([[0.9, 0.2], [0.6, 0.7]], [[1, 0], [0, 1]])
    assert abs(fmax(pt) - fmax_oracle(pt.scores, pt.truth)) < 1e-12
    # the best threshold lies in (0.6, 0.7]: both proteins predict exactly their true term
    assert fmax(pt) == 1.0


def test_fmax_matches_oracle(rng):
    for k in range(100):
        pt = random_table(rng, grid=k % 2 == 0)
        assert abs(fmax(pt) - fmax_oracle(pt.scores, pt.truth)) < 1e-12


def test_fmax_ignores_unannotated_proteins():
    a = PredictionTable([[0.9, 0.1]], [[1, 0]])
    b = PredictionTable([[0.9, 0.1], [0.8, 0.8]], [[1, 0], [0, 0]])
    assert fmax(a) == fmax(b) == 1.0
    assert fmax(PredictionTable([[0.5]], [[0]])) == 0.0


def test_fmax_invariances(rng):
    for _ in range(30):
        pt = random_table(rng)
        perm = rng.permutation(pt.shape[0])
        assert fmax(PredictionTable(pt.scores[perm], pt.truth[perm])) == fmax(pt)
        floored = np.floor(pt.scores * 100) / 100
        assert abs(fmax(PredictionTable(floored, pt.truth)) - fmax(pt)) < 1e-15


# ---------------------------------------------------------------- aupr

def test_aupr_examples():
    assert aupr_pair(PredictionTable([[0.9, 0.8, 0.1, 0.0]], [[1, 1, 0, 0]])) == 1.0
    assert aupr_pair(PredictionTable([[0.9, 0.8, 0.7, 0.1]], [[0, 0, 0, 1]])) == 0.25
    with pytest.raises(NoPositives):
        aupr_pair(PredictionTable([[0.3, 0.2]], [[0, 0]]))


def test_aupr_ties_grouped():
    # all scores tied: a single step at recall 1 with precision = base rate
    pt = PredictionTable(np.full((2, 3), 0.5), [[1, 0, 0], [0, 1, 0]])
    assert abs(aupr_pair(pt) - 2 / 6) < 1e-15


def test_aupr_matches_oracles(rng):
    for k in range(100):
        pt = random_table(rng, grid=k % 2 == 0)
        value = aupr_pair(pt)
        assert abs(value - aupr_oracle(pt.scores, pt.truth)) < 1e-12
        assert abs(value - average_precision_score(pt.truth.ravel(), pt.scores.ravel())) < 1e-12


def test_aupr_monotone_and_permutation_invariance(rng):
    for k in range(50):
        pt = random_table(rng, grid=k % 2 == 0)
        value = aupr_pair(pt)
        for transform in (lambda s: s ** 3, lambda s: np.sqrt(s), lambda s: 0.5 * s + 0.25):
            assert aupr_pair(PredictionTable(transform(pt.scores), pt.truth)) == value
        perm = rng.permutation(pt.shape[0])
        assert aupr_pair(PredictionTable(pt.scores[perm], pt.truth[perm])) == pytest.approx(value, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_metrics_in_unit_interval(p, t, seed):
    pt = random_table(np.random.default_rng(seed), p, t, grid=seed % 2 == 0)
    assert 0.0 <= fmax(pt) <= 1.0
    assert 0.0 <= aupr_pair(pt) <= 1.0


# ---------------------------------------------------------------- accuracy

def test_accuracy_examples(rng):
    labels = np.array([2, 0, 1])
    assert accuracy(np.eye(3)[labels], labels) == 1.0
    assert accuracy(np.zeros((4, 3)), np.zeros(4, dtype=int)) == 1.0
    for _ in range(20):
        logits = rng.integers(0, 3, size=(15, 4)).astype(float)
        y = rng.integers(0, 4, 15)
        assert accuracy(logits, y) == accuracy_oracle(logits, y)
    with pytest.raises(ShapeMismatch):
        accuracy(np.zeros((3, 2)), [0, 1])


# ---------------------------------------------------------------- tables

def test_prediction_table_validation():
    with pytest.raises(ShapeMismatch):
        PredictionTable(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        PredictionTable([[1.5]], [[1]])
    with pytest.raises(ValueError):
        PredictionTable([[0.5]], [[2]])


def test_prediction_table_text_round_trip(rng, tmp_path):
    pt = random_table(rng)
    path = tmp_path / "pred.txt"
    write_prediction_table(pt, path)
    back = read_prediction_table(path)
    assert np.array_equal(back.scores, pt.scores) and np.array_equal(back.truth, pt.truth)
    assert path.read_text().splitlines()[0] == f"{pt.shape[0]} {pt.shape[1]}"
    assert format_prediction_table(back) == path.read_text()


@pytest.mark.parametrize("text", ["", "2\n", "1 2\n0.5 0.5\n", "1 2\n0.5\n1 0\n", "1 2\n0.5 x\n1 0\n",
                                  "0 2\n", "a b\n"])
def test_prediction_table_schema_errors(text):
    with pytest.raises(SchemaError):
        parse_prediction_table(text)


# ---------------------------------------------------------------- heads and training

def tiny_setup(num_terms=1, kind="multilabel", count=1, seed=0, hidden=8):
    structures = synthetic_structures(np.random.default_rng(seed), count, 12)
    graphs = [build_graph(s) for s in structures]
    enc = GearNet(EncoderConfig(num_layers=2, hidden_dim=hidden, use_edge_mp=False))
    head = TaskHead(enc.output_dim, num_terms, kind)
    store = enc.init_params(ParameterStore(), np.random.default_rng(1))
    head.init_params(store, np.random.default_rng(2))
    return enc, head, store, graphs, structures


def test_task_head_dims_and_errors():
    head = TaskHead(16, 5)
    assert head.dims == [16, 16, 16, 5]
    with pytest.raises(ValueError):
        TaskHead(16, 5, "regression")
    with pytest.raises(ValueError):
        TaskHead(16, 0)


def test_task_target():
    enc, head, store, graphs, structures = tiny_setup(3, "multiclass")
    assert task_target(DatasetRecord(structures[0], [0, 1, 0]), head).tolist() == [1]
    with pytest.raises(BadTarget):
        task_target(DatasetRecord(structures[0], [1, 1, 0]), head)
    with pytest.raises(BadTarget):
        task_target(DatasetRecord(structures[0]), head)
    with pytest.raises(ShapeMismatch):
        task_target(DatasetRecord(structures[0], [1, 0]), head)
    ml = TaskHead(4, 3)
    assert task_target(DatasetRecord(structures[0], [1, 0, 1]), ml).tolist() == [[1.0, 0.0, 1.0]]


def test_overfit_one_protein_one_term():
    enc, head, store, graphs, structures = tiny_setup()
    records = [DatasetRecord(structures[0], [1])]
    log = train_task(enc, head, store, graphs, records, Adam(1e-3), 200, 1, seed=0)
    losses = [loss for _, loss in log.steps]
    assert len(losses) == 200
    assert all(b < a for a, b in zip(losses[:10], losses[1:11]))
    assert losses[-1] < 0.05


def test_zero_learning_rate_constant_loss():
    enc, head, store, graphs, structures = tiny_setup(2, count=3)
    records = [DatasetRecord(s, [1, 0]) for s in structures]
    log = train_task(enc, head, store, graphs, records, SGD(0.0), 5, 3, seed=0)
    values = [e["loss"] for e in log.epochs]
    assert all(v == values[0] for v in values)


def test_training_deterministic():
    logs = []
    for _ in range(2):
        enc, head, store, graphs, structures = tiny_setup(2, count=4)
        records = [DatasetRecord(s, [k % 2, 1 - k % 2]) for k, s in enumerate(structures)]
        log = train_task(enc, head, store, graphs, records, Adam(1e-3), 3, 2, seed=5)
        logs.append((log.steps, log.to_rows(), {k: v.tobytes() for k, v in log.best_store.state_dict().items()}))
    assert logs[0] == logs[1]


def test_validation_picks_best_epoch():
    enc, head, store, graphs, structures = tiny_setup(2, "multiclass", count=4)
    records = [DatasetRecord(s, [k % 2, 1 - k % 2]) for k, s in enumerate(structures)]
    log = train_task(enc, head, store, graphs[:2], records[:2], Adam(1e-3), 4, 2, seed=0,
                     valid=(graphs[2:], records[2:]))
    values = [e["value"] for e in log.epochs]
    assert all(e["metric"] == "accuracy" for e in log.epochs)
    assert log.best_value == max(values)
    assert log.best_epoch == values.index(max(values)) + 1
    result = evaluate(enc, head, log.best_store, graphs[2:], records[2:])
    assert result == {"metric": "accuracy", "value": log.best_value}


def test_empty_dataset():
    enc, head, store, _, _ = tiny_setup()
    with pytest.raises(EmptyDataset):
        train_task(enc, head, store, [], [], Adam(1e-3), 1, 1, seed=0)


def test_predict_outputs_probabilities():
    enc, head, store, graphs, structures = tiny_setup(3, count=2)
    out = predict(enc, head, store, graphs)
    assert out.shape == (2, 3) and np.all((out > 0) & (out < 1))
    records = [DatasetRecord(s, [1, 0, 1]) for s in structures]
    assert evaluate(enc, head, store, graphs, records)["metric"] == "fmax"
    with pytest.raises(ValueError):
        evaluate(enc, head, store, graphs, records, "accuracy")
