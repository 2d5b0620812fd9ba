import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypermv import hypergraph as hg
from hypermv.ablation import format_table, grid_cells, run_ablation
from hypermv.backbone import extract
from hypermv.cli import main
from hypermv.config import RunConfig
from hypermv.dataset import (
    CROSS_SUBJECT,
    CROSS_VIEW,
    DatasetSplit,
    RecordingManifest,
    Sample,
    make_splits,
    split_by_subjects,
)
from hypermv.events import ViewStream
from hypermv.model import HyperMVModel, forward_pass, recording_volumes
from hypermv.training import (
    DivergenceError,
    VolumeCache,
    evaluate_model,
    expand_single_view,
    predict,
    topk_accuracy,
    train,
)

from oracles import vanilla_hgnn


def fake_manifests(n_subjects, C=2, V=3):
    return [
        RecordingManifest(f"c{c:03d}_s{s:05d}", c, s, V, 8, 8, 0, 100, tuple(f"view{v}.csv" for v in range(V)))
        for c in range(C)
        for s in range(n_subjects)
    ]


# ---------------------------------------------------------------- splits

@pytest.mark.parametrize("n, sizes", [(105, (85, 10, 10)), (10, (8, 1, 1)), (19, (17, 1, 1))])
def test_cross_subject_ratio(n, sizes):
    split = make_splits(fake_manifests(n), CROSS_SUBJECT, seed=0)
    assert (len(split.train_subjects), len(split.val_subjects), len(split.test_subjects)) == sizes
    assert len(split.train) == 2 * sizes[0]
    assert all(s.views == (0, 1, 2) for s in split.test)


def test_cross_subject_needs_ten_subjects():
    with pytest.raises(ValueError):
        make_splits(fake_manifests(9), CROSS_SUBJECT, seed=0)


def test_splits_deterministic_and_seed_dependent():
    ms = fake_manifests(30)
    a = make_splits(ms, CROSS_SUBJECT, 4)
    assert a.to_json() == make_splits(ms, CROSS_SUBJECT, 4).to_json()
    assert a.test_subjects != make_splits(ms, CROSS_SUBJECT, 5).test_subjects


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(10, 60))
def test_cross_subject_disjoint(seed, n):
    split = make_splits(fake_manifests(n, C=1), CROSS_SUBJECT, seed)
    tr, va, te = map(set, (split.train_subjects, split.val_subjects, split.test_subjects))
    assert not (tr & va or tr & te or va & te)
    assert tr | va | te == set(range(n))
    subj = {f"c000_s{s:05d}": s for s in range(n)}
    assert {subj[s.recording_id] for s in split.test} == te


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 8))
def test_cross_view_invariants(seed, V):
    split = make_splits(fake_manifests(4, V=V), CROSS_VIEW, seed)
    tr, va, te = map(set, (split.train_views, split.val_views, split.test_views))
    assert not (tr & va or tr & te or va & te)
    assert tr | va | te == set(range(V))
    assert len(te) == 1 and len(va) == 1
    assert all(s.views == tuple(sorted(tr)) for s in split.train)
    for part in (split.train, split.val, split.test):
        assert {s.recording_id[-5:] for s in part} == {f"{i:05d}" for i in range(4)}


def test_cross_view_needs_three_views():
    with pytest.raises(ValueError):
        make_splits(fake_manifests(4, V=2), CROSS_VIEW, 0)


def test_split_round_trip(tmp_path):
    split = make_splits(fake_manifests(12), CROSS_VIEW, 3)
    split.save(tmp_path / "s.json")
    assert DatasetSplit.load(tmp_path / "s.json") == split


def test_split_by_subjects_rejects_overlap():
    with pytest.raises(ValueError):
        split_by_subjects(fake_manifests(5), [0, 1], [1], [2])


# ---------------------------------------------------------------- config

def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig()
    assert (cfg.T, cfg.k, cfg.L, cfg.lr, cfg.weight_decay, cfg.batch_size, cfg.epochs, cfg.gamma) == (
        9, 3, 2, 1e-4, 1e-4, 12, 40, 0.5)
    cfg = cfg.with_(variant="hypermv-gnn", channels=(4, 8))
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("bad", [{"variant": "x"}, {"strategy": "x"}, {"T": 0}, {"bogus": 1}])
def test_config_rejects_bad_fields(bad):
    with pytest.raises(ValueError):
        RunConfig.from_json(bad)


# ---------------------------------------------------------------- forward

def test_empty_recording_gives_finite_logits():
    model = HyperMVModel(RunConfig(T=3, channels=(4, 8)), 4, 2)
    streams = [ViewStream.empty(16, 16, 0, 1000)] * 2
    logits = forward_pass(streams, model).data
    assert logits.shape == (4,) and np.isfinite(logits).all()


@pytest.mark.parametrize("strategy", ["rule", "knn", "both"])
def test_attention_off_equals_vanilla_reference(strategy):
    cfg = RunConfig(T=4, channels=(4, 8), attention=False, strategy=strategy, k=2)
    model = HyperMVModel(cfg, 3, 3)
    vols = np.random.default_rng(0).normal(size=(3, 4, 16, 16))
    logits = model.forward([vols]).data[0]
    X = extract(list(vols), cfg.backbone, model.params, normalize=False).data
    edges = hg.build_edges(X, 3, 4, 2, strategy)
    H = hg.build_incidence(edges, 12).H
    XL = vanilla_hgnn(X, H, [model.params[f"prop.theta{l}"].data for l in range(cfg.L)])
    ref = XL.mean(axis=0) @ model.params["head.weight"].data + model.params["head.bias"].data
    assert np.abs(logits - ref).max() < 1e-9


def test_initial_attention_is_identity():
    cfg = RunConfig(T=3, channels=(4, 8))
    model = HyperMVModel(cfg, 3, 2)
    assert not (model.params["attn.we"].data - 1).any()
    assert not (model.params["attn.wv"].data - 1).any()


def test_batched_forward_matches_single():
    model = HyperMVModel(RunConfig(T=3, channels=(4, 8)), 3, 2)
    rng = np.random.default_rng(1)
    vols = [rng.normal(size=(2, 3, 16, 16)) for _ in range(3)]
    batch = model.forward(vols).data
    for i, v in enumerate(vols):
        assert np.allclose(model.forward([v]).data[0], batch[i], atol=1e-12)


@pytest.mark.parametrize("variant", ["hypermv", "hypermv-gnn", "multi-view-baseline"])
def test_other_view_counts_are_accepted(variant):
    model = HyperMVModel(RunConfig(T=3, channels=(4, 8), variant=variant, k=2), 3, 3)
    out = model.forward([np.random.default_rng(2).normal(size=(1, 3, 16, 16))])
    assert out.shape == (1, 3)


def test_single_view_baseline_evaluates_views_independently(tiny_data):
    root, manifests = tiny_data
    cfg = RunConfig(T=3, channels=(4, 8), variant="single-view-baseline")
    model = HyperMVModel(cfg, 3, 3)
    cache = VolumeCache(root, manifests, 3)
    sample = Sample(manifests[0].recording_id, (0, 1, 2), manifests[0].label)
    expanded = expand_single_view([sample])
    assert [s.views for s in expanded] == [(0,), (1,), (2,)]
    vol = cache.get(sample)
    logits = predict(model, [cache.get(s) for s in expanded])
    for v in range(3):
        assert np.allclose(logits[v], model.forward([vol[v:v + 1]]).data[0], atol=1e-12)
    assert evaluate_model(model, [sample], cache)["n"] == 3


def test_model_save_load_round_trip(tmp_path):
    model = HyperMVModel(RunConfig(T=3, channels=(4, 8), seed=3), 3, 2)
    model.save(tmp_path)
    back = HyperMVModel.load(tmp_path / "model.hmv")
    vols = [np.random.default_rng(0).normal(size=(2, 3, 16, 16))]
    assert np.array_equal(model.forward(vols).data, back.forward(vols).data)


def test_recording_volumes_shape(tiny_data):
    root, manifests = tiny_data
    vols = recording_volumes(manifests[0].read_views(root), 5)
    assert vols.shape == (3, 5, 16, 16)
    assert np.abs(vols).max() == 1.0


# ---------------------------------------------------------------- training

def test_one_epoch_smoke(tiny_data, tiny_config, tmp_path):
    root, manifests = tiny_data
    split = split_by_subjects(manifests, range(3), [3], [4])  # 9 train recordings + 1 val subject
    res = train(tiny_config, split, root, tmp_path)
    assert res.checkpoint.exists() and (tmp_path / "model.json").exists()
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert set(json.loads(lines[0])) == {"epoch", "lr", "train_loss", "train_top1", "val_loss", "val_top1"}


def test_overfit_two_recordings(tiny_data, tmp_path):
    root, manifests = tiny_data
    two = [m for m in manifests if m.subject == 0][:2]
    split = split_by_subjects(two, [0], [], [])
    cfg = RunConfig(T=3, channels=(4, 8), epochs=200, batch_size=2, lr=3e-3, decay_step=1000)
    res = train(cfg, split, root, tmp_path, manifests=two)
    losses = [r["train_loss"] for r in res.metrics]
    step = next(i for i, l in enumerate(losses) if l < 0.05)
    assert step < 200
    # monotone decrease up to the point where the target is reached
    assert all(b <= a for a, b in zip(losses[:step + 1], losses[1:step + 1]))


def test_same_seed_same_log(tiny_data, tiny_config, tmp_path):
    root, manifests = tiny_data
    split = make_splits(manifests, CROSS_SUBJECT, 0)
    cfg = tiny_config.with_(epochs=2)
    train(cfg, split, root, tmp_path / "a")
    train(cfg, split, root, tmp_path / "b", workers=2)
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert (tmp_path / "a" / "model.hmv").read_bytes() == (tmp_path / "b" / "model.hmv").read_bytes()


def test_divergence_aborts(tiny_data, tiny_config, tmp_path):
    root, manifests = tiny_data
    split = split_by_subjects(manifests, range(3), [], [])
    with pytest.raises(DivergenceError):
        train(tiny_config.with_(lr=1e300, epochs=3), split, root, tmp_path)


def test_cross_view_training_runs(tiny_data, tiny_config, tmp_path):
    root, manifests = tiny_data
    split = make_splits(manifests, CROSS_VIEW, 0)
    res = train(tiny_config, split, root, tmp_path)
    cache = VolumeCache(root, manifests, 3)
    assert res.model.views == 1
    assert evaluate_model(res.model, split.test, cache)["n"] == len(manifests)


# ---------------------------------------------------------------- metrics

def test_topk_perfect_predictor():
    labels = [0, 3, 1, 4, 2]
    logits = np.eye(5)[labels]
    assert topk_accuracy(logits, labels) == {1: 1.0, 3: 1.0, 5: 1.0}


def test_topk_uniform_ties_go_to_small_index():
    labels = np.array([0, 0, 1, 2, 3, 4, 4, 0])
    acc = topk_accuracy(np.zeros((8, 5)), labels)
    assert acc[1] == np.mean(labels == 0)
    assert acc[3] == np.mean(labels < 3)
    assert acc[5] == 1.0


def test_topk_monte_carlo():
    rng = np.random.default_rng(0)
    n, C = 20_000, 50
    acc = topk_accuracy(rng.normal(size=(n, C)), rng.integers(0, C, size=n))
    for m in (1, 3, 5):
        p = m / C
        assert abs(acc[m] - p) < 3 * np.sqrt(p * (1 - p) / n)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_topk_is_monotone(seed):
    rng = np.random.default_rng(seed)
    logits = rng.integers(-2, 3, size=(20, 6)).astype(float)
    acc = topk_accuracy(logits, rng.integers(0, 6, size=20))
    assert acc[1] <= acc[3] <= acc[5]


def test_topk_bad_label():
    with pytest.raises(ValueError):
        topk_accuracy(np.zeros((1, 3)), [3])


# ---------------------------------------------------------------- ablation

def test_grid_cells_product():
    assert len(grid_cells({"strategy": ["rule", "knn", "both"], "attention": [True, False]})) == 6
    assert grid_cells({"L": [1, 2]}) == [{"L": 1}, {"L": 2}]


def test_ablation_three_strategies_one_seed(tiny_data, tiny_config):
    root, manifests = tiny_data
    split = make_splits(manifests, CROSS_SUBJECT, 0)
    rows = run_ablation(tiny_config, {"strategy": ["rule", "knn", "both"]}, [0], split, root)
    assert [r["strategy"] for r in rows] == ["rule", "knn", "both"]
    assert all(len(r["top1"]) == 1 and r["top1_std"] == 0.0 for r in rows)
    text = format_table(rows)
    assert len(text.splitlines()) == 4
    assert json.loads(format_table(rows, "json")) == rows


def test_ablation_rejects_unknown_axis(tiny_data, tiny_config):
    root, manifests = tiny_data
    with pytest.raises(ValueError):
        run_ablation(tiny_config, {"depth": [1]}, [0], make_splits(manifests, CROSS_SUBJECT, 0), root)


# ---------------------------------------------------------------- CLI

def test_cli_end_to_end(tmp_path, capsys):
    d = tmp_path / "data"
    assert main(["synth", "--classes", "2", "--subjects", "10", "--views", "3", "--width", "16",
                 "--height", "16", "--focal", "20", "--duration-us", "150000", "--out", str(d)]) == 0
    assert len(list(d.glob("*/manifest.json"))) == 20
    assert main(["split", "--data", str(d), "--seed", "1", "--out", str(tmp_path / "split.json")]) == 0
    cfg = tmp_path / "cfg.json"
    RunConfig(T=3, channels=(4, 8), epochs=1).save(cfg)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(d), "--split", str(tmp_path / "split.json"),
                 "--out", str(run)]) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "model.hmv"), "--data", str(d),
                 "--split", str(tmp_path / "split.json"), "--partition", "test"]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["n"] == 2 and metrics["top1"] <= metrics["top3"] <= metrics["top5"]

    rec = next(d.iterdir())
    assert main(["inspect", "--recording", str(rec), "--dump", "hypergraph", "--checkpoint", str(run / "model.hmv")]) == 0
    dump = json.loads(capsys.readouterr().out)
    assert dump["hypergraph"]["H_shape"] == [9, 6 + 9]
    assert abs(sum(dump["omega"]) - 1) < 1e-12
    assert main(["inspect", "--recording", str(rec), "--dump", "weights", "--checkpoint", str(run / "model.hmv")]) == 0
    assert "attn.we" in json.loads(capsys.readouterr().out)
    assert main(["inspect", "--recording", str(rec), "--dump", "frames", "--T", "4"]) == 0
    frames = json.loads(capsys.readouterr().out)
    assert len(frames["views"]) == 3 and len(frames["views"][0]["frame_sums"]) == 4

    out = tmp_path / "v.npz"
    assert main(["convert", "--in", str(rec), "--out", str(out), "--T", "5"]) == 0
    with np.load(out) as z:
        assert z["frames"].shape == (3, 5, 16, 16) and z["volumes"].shape == (3, 5, 16, 16)
    capsys.readouterr()

    grid = tmp_path / "grid.json"
    grid.write_text('{"attention": [true, false]}')
    assert main(["ablate", "--grid", str(grid), "--seeds", "1", "--config", str(cfg), "--data", str(d),
                 "--split", str(tmp_path / "split.json"), "--format", "json"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 2


def test_cli_errors(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.hmv"), "--data", str(tmp_path),
                 "--split", str(tmp_path / "none.json")]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["synth"])
