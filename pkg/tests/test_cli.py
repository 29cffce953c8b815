import csv
import json

import pytest

from kcln.cli import main
from kcln.graph import load_graph, split, subsample
from kcln.grounding import empty_masks
from kcln.network import NetworkConfig
from kcln.runner import ConfigError, aggregate, load_experiment_config, read_results
from kcln.training import TrainConfig, train


@pytest.fixture
def bench(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", "--out", str(data), "--n-entities", "60", "--noise-rate", "0.2", "--noise-predicate", "f0"]) == 0
    cfg = {
        "entities": "data/entities.csv",
        "edges": "data/edges.tsv",
        "rules": "data/rules_true.txt",
        "eval_labels": "data/clean_labels.csv",
        "net": {"n_layers": 2, "hidden_dim": 6, "activation": "tanh"},
        "train": {"learning_rate": 0.1, "momentum": 0.9, "max_epochs": 4, "validation_fraction": 0.0},
        "n_seeds": 2,
        "threshold": 1.0,
        "output_dir": "out",
        "sample_fractions": [0.25, 0.5],
        "alphas": [0.2, 1.0],
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_writes_curves_and_checkpoints(bench, capsys):
    root, cfg = bench
    assert main(["train", str(cfg)]) == 0
    rows = _rows(root / "out" / "results_epochs.csv")
    assert {r["model"] for r in rows} == {"kcln", "vanilla"}
    assert {r["seed"] for r in rows} == {"0", "1"}
    assert {r["epoch"] for r in rows} == {str(e) for e in range(5)}
    curve = _rows(root / "out" / "curves" / "kcln_seed0.csv")
    assert list(curve[0]) == ["epoch", "split", "metric", "value"]

    capsys.readouterr()
    ck = root / "out" / "checkpoints" / "kcln_seed0.json"
    args = ["eval", str(ck), "--entities", str(root / "data/entities.csv"), "--edges", str(root / "data/edges.tsv")]
    args += ["--labels", str(root / "data/clean_labels.csv"), "--curve-csv", str(root / "eval.csv")]
    assert main(args) == 0
    report = json.loads(capsys.readouterr().out)
    final = [r for r in rows if r["model"] == "kcln" and r["seed"] == "0" and r["epoch"] == "4" and r["metric"] == "micro_f1"]
    assert report["metrics"]["micro_f1"] == pytest.approx(float(final[0]["value"]), abs=1e-12)
    assert sum(map(sum, report["confusion"])) == report["n_evaluated"]
    assert _rows(root / "eval.csv")[0]["split"] == "eval"


def test_sample_sweep_one_row_per_key(bench):
    root, cfg = bench
    assert main(["sweep-samples", str(cfg)]) == 0
    rows = _rows(root / "out" / "results_sample_sweep.csv")
    keys = [(r["model"], r["sample_fraction"], r["seed"], r["metric"]) for r in rows]
    assert len(keys) == len(set(keys))
    assert sorted({float(r["sample_fraction"]) for r in rows}) == [0.25, 0.5]


def test_alpha_sweep_and_plot_data(bench, tmp_path):
    root, cfg = bench
    assert main(["sweep-alpha", str(cfg), "--alphas", "0,0.2,1.0"]) == 0
    rows = read_results(root / "out" / "results_alpha_sweep.csv")
    assert {r["alpha"] for r in rows if r["model"] == "kcln"} == {"0.0", "0.2", "1.0"}
    # alpha = 0 reproduces the vanilla rows exactly
    strip = lambda model, alpha: sorted(  # noqa: E731
        (r["sample_fraction"], r["seed"], r["metric"], r["value"]) for r in rows if r["model"] == model and r["alpha"] == alpha
    )
    assert strip("kcln", "0.0") == strip("vanilla", "0.0")
    out = tmp_path / "agg.csv"
    assert main(["plot-data", str(root / "out" / "results_alpha_sweep.csv"), "--out", str(out)]) == 0
    agg = _rows(out)
    assert all(r["n"] == "2" for r in agg)
    assert len(agg) == len(aggregate(rows))


def test_sweep_vanilla_matches_standalone_run(bench):
    root, cfg_path = bench
    assert main(["sweep-samples", str(cfg_path), "--fractions", "0.5", "--n-seeds", "1"]) == 0
    rows = _rows(root / "out" / "results_sample_sweep.csv")
    got = {r["metric"]: float(r["value"]) for r in rows if r["model"] == "vanilla"}
    cfg = load_experiment_config(cfg_path)
    g = load_graph(cfg.entities, cfg.edges)
    from kcln.graph import load_labels

    sp = subsample(split(g, 0.6, 0), 0.5, 0)
    res = train(g, sp, empty_masks(g), NetworkConfig.for_graph(g, **cfg.net), TrainConfig(**cfg.train, seed=0),
                eval_labels=load_labels(cfg.eval_labels, g))
    assert got["micro_f1"] == res.final_metric("test", "micro_f1")


def test_parallel_pool_gives_identical_csv(bench, monkeypatch):
    root, cfg = bench
    assert main(["sweep-samples", str(cfg)]) == 0
    serial = (root / "out" / "results_sample_sweep.csv").read_bytes()
    monkeypatch.setenv("KCLN_THREADS", "2")
    assert main(["sweep-samples", str(cfg)]) == 0
    assert (root / "out" / "results_sample_sweep.csv").read_bytes() == serial


def test_ground_outputs(bench, tmp_path):
    root, _ = bench
    out = tmp_path / "g"
    args = ["ground", "--entities", str(root / "data/entities.csv"), "--edges", str(root / "data/edges.tsv")]
    assert main(args + ["--rules", str(root / "data/rules_true.txt"), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"entity_flags", "preferred_labels"}
    entity_mask = _rows(out / "entity_mask.csv")
    assert len(entity_mask) == 30 and len(entity_mask[0]) == 61


def test_exit_codes(bench, tmp_path):
    root, cfg = bench
    assert main(["train", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**json.loads(cfg.read_text()), "n_seeds": 0}))
    assert main(["train", str(bad)]) == 1
    assert main(["sweep-samples", str(cfg), "--fractions", "0.5,0.2"]) == 1
    assert main(["gen-data", "--out", str(tmp_path / "x"), "--homophily", "2"]) == 1
    assert main(["no-such-command"]) == 1
    rules = tmp_path / "broken.txt"
    rules.write_text("attr(X => label(X,\"a\")+\n")
    args = ["ground", "--entities", str(root / "data/entities.csv"), "--edges", str(root / "data/edges.tsv")]
    assert main(args + ["--rules", str(rules), "--out", str(tmp_path / "g")]) == 1


def test_runtime_failure_exit_code(bench, monkeypatch):
    from kcln import runner
    from kcln.training import TrainingDiverged

    def boom(*args, **kwargs):
        raise TrainingDiverged("non-finite loss at epoch 3")

    monkeypatch.setattr(runner, "train", boom)
    _, cfg = bench
    assert main(["train", str(cfg)]) == 2


def test_config_validation():
    from kcln.runner import ExperimentConfig

    with pytest.raises(ConfigError):
        ExperimentConfig(entities="e", edges="d", alphas=[1.5])
    with pytest.raises(ConfigError):
        ExperimentConfig(entities="e", edges="d", sample_fractions=[0.0, 0.5])
    with pytest.raises(ConfigError):
        ExperimentConfig(entities="e", edges="d", train={"bogus": 1})
