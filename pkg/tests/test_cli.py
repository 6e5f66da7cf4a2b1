import json
import math

import numpy as np
import pytest

from hiercert import cli, io, rng
from hiercert.core import LabelPartition
from hiercert.hierarchy import build_renormalize_hierarchy
from hiercert.models import LinearSoftmax, train

from helpers import make_blobs, synth_prob_dataset


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def constant_model_spec(n_labels, dim, winner):
    W = np.zeros((n_labels, dim))
    b = np.zeros(n_labels)
    b[winner] = 1.0
    return {"type": "linear", "W": W.tolist(), "b": b.tolist()}


class TestCertifyCommand:
    def test_constant_classifier_bound_is_closed_form(self, tmp_path):
        ids = [f"s{i}" for i in range(5)]
        labels = np.full(5, 2)
        X = rng.normals(1, 950, 0, 10).reshape(5, 2)
        io.write_features(tmp_path / "data.csv", ids, labels, X)
        n = 2000
        alpha = 0.01
        cfg = write_config(tmp_path, "c.json", {
            "seed": 7, "sigma": 0.5, "n0": 50, "n": n, "alpha_conf": alpha,
            "model": constant_model_spec(3, 2, 2),
            "dataset": {"features": "data.csv"},
            "radius_thresholds": [0.25, 0.5],
        })
        assert cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        rows = io.read_certificates(tmp_path / "out" / "certificates_sigma0p5.csv")
        expected = alpha ** (1.0 / n)
        for r in rows:
            assert not r["abstain"]
            assert r["pred"] == 2
            assert r["p_a_lower"] == pytest.approx(expected, abs=1e-12)
        summary = (tmp_path / "out" / "certified_accuracy.csv").read_text().splitlines()
        assert summary[0] == "sigma,radius_threshold,certified_accuracy"
        assert len(summary) == 3

    def test_empty_dataset_warns_and_exits_zero(self, tmp_path, capsys):
        io.write_features(tmp_path / "data.csv", [], np.empty(0, np.int64),
                          np.empty((0, 2)))
        cfg = write_config(tmp_path, "c.json", {
            "seed": 1, "sigma": 0.25, "n": 100,
            "model": constant_model_spec(2, 2, 0),
            "dataset": {"features": "data.csv"},
        })
        assert cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        err = capsys.readouterr().err
        assert "empty dataset" in err
        body = (tmp_path / "out" / "certificates_sigma0p25.csv").read_text().splitlines()
        assert len(body) == 1  # header only

    def test_byte_identical_reruns(self, tmp_path):
        ids = [f"s{i}" for i in range(3)]
        labels = np.array([0, 1, 0])
        X = rng.normals(2, 951, 0, 6).reshape(3, 2)
        io.write_features(tmp_path / "data.csv", ids, labels, X)
        cfg = write_config(tmp_path, "c.json", {
            "seed": 3, "sigma": 0.5, "n": 500, "n0": 20,
            "model": {"type": "linear", "W": [[0.0, 0.0], [2.0, 1.0]], "b": [0.0, 0.0]},
            "dataset": {"features": "data.csv"},
        })
        assert cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        for name in ("certificates_sigma0p5.csv", "certified_accuracy.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override_changes_outputs(self, tmp_path):
        ids = ["s0"]
        labels = np.array([1])
        io.write_features(tmp_path / "data.csv", ids, labels, np.array([[0.4, 0.1]]))
        cfg = write_config(tmp_path, "c.json", {
            "seed": 3, "sigma": 1.0, "n": 400, "n0": 20,
            "model": {"type": "linear", "W": [[0.0, 0.0], [2.0, 1.0]], "b": [0.0, 0.0]},
            "dataset": {"features": "data.csv"},
        })
        cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "a")])
        cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "99"])
        meta_a = json.loads((tmp_path / "a" / "certified_accuracy.meta.json").read_text())
        meta_b = json.loads((tmp_path / "b" / "certified_accuracy.meta.json").read_text())
        assert meta_a["seed"] == 3 and meta_b["seed"] == 99
        assert meta_a["config_hash"] != meta_b["config_hash"]

    def test_lookup_model_rejected(self, tmp_path):
        io.write_logits(tmp_path / "l.csv", ["a"], np.array([0]), np.array([[1.0, 0.0]]))
        io.write_features(tmp_path / "data.csv", ["a"], np.array([0]), np.array([[0.0, 0.0]]))
        cfg = write_config(tmp_path, "c.json", {
            "model": {"type": "lookup", "logits": "l.csv"},
            "dataset": {"features": "data.csv"},
        })
        assert cli.main(["certify", "--config", cfg, "--out", str(tmp_path / "out")]) == 1


class TestValidation:
    def test_unknown_key_exits_one(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "c.json", {"seed": 1, "bogus": True})
        assert cli.main(["toy-prf", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_missing_config_file_exits_one(self, tmp_path):
        assert cli.main(["toy-prf", "--config", str(tmp_path / "nope.json"),
                         "--out", str(tmp_path / "o")]) == 1

    def test_runtime_error_exits_two(self, tmp_path):
        # attacking a lookup classifier is a capability error, not validation
        spec = {"n_labels": 2,
                "root": {"kind": "leaf", "labels": [0, 1], "strategy": "renormalize",
                         "classifier": {"type": "lookup", "logits": "l.csv"}}}
        io.write_logits(tmp_path / "l.csv", ["a"], np.array([0]), np.array([[1.0, 0.0]]))
        io.write_json(tmp_path / "h.json", spec)
        io.write_features(tmp_path / "data.csv", ["a"], np.array([0]),
                          np.array([[0.0, 0.0]]))
        cfg = write_config(tmp_path, "c.json", {
            "hierarchy": "h.json", "dataset": {"features": "data.csv"},
            "attack": {"mode": "worst_case", "epsilon": 0.1, "step": 0.05, "iters": 3},
        })
        assert cli.main(["attack", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


class TestSweepCommand:
    def test_monotone_mean_column(self, tmp_path):
        P = synth_prob_dataset(5, 300, 8)
        ids = [f"s{i}" for i in range(300)]
        io.write_probs(tmp_path / "p.csv", ids, np.argmax(P, axis=1), P)
        cfg = write_config(tmp_path, "c.json", {
            "seed": 2, "sigma": 0.5, "probs": {"probs": "p.csv"},
            "sizes": [2, 4, 6, 8], "mode": "all",
        })
        assert cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        lines = (tmp_path / "out" / "subset_radius_sweep.csv").read_text().splitlines()
        means = [float(line.split(",")[3]) for line in lines[1:]]
        assert means == sorted(means, reverse=True)


class TestDiscoverCommand:
    def test_embedding_clustering_recovers_split(self, tmp_path):
        # labels 0,1 cluster on the left, 2,3 on the right
        X, y4 = make_blobs(6, 40, [(-5, -1), (-5, 1), (5, -1), (5, 1)], spread=0.4)
        ids = [f"s{i}" for i in range(len(y4))]
        io.write_features(tmp_path / "e.csv", ids, y4, X)
        cfg = write_config(tmp_path, "c.json", {
            "seed": 4, "k": 2, "embeddings": "e.csv",
        })
        assert cli.main(["discover", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        classes = json.loads((tmp_path / "out" / "partition.json").read_text())
        assert {frozenset(c) for c in classes} == {frozenset({0, 1}), frozenset({2, 3})}

    def test_confusion_blocks(self, tmp_path):
        # synthetic block structure: labels 0,1,8,9 confuse among themselves,
        # labels 2..7 among themselves
        m = 10
        cm = np.zeros((m, m), dtype=int)
        groups = [(0, 1, 8, 9), (2, 3, 4, 5, 6, 7)]
        for g in groups:
            for i in g:
                for j in g:
                    cm[i, j] = 40 if i == j else 6
        io.write_confusion(tmp_path / "cm.csv", cm)
        cfg = write_config(tmp_path, "c.json", {"k": 2, "confusion": "cm.csv"})
        assert cli.main(["discover", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        classes = json.loads((tmp_path / "out" / "partition.json").read_text())
        assert {frozenset(c) for c in classes} == {frozenset(g) for g in groups}

    def test_both_sources_rejected(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"k": 2, "embeddings": "a", "confusion": "b"})
        assert cli.main(["discover", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


class TestHierarchyCommand:
    def test_identity_partition_matches_baseline(self, tmp_path):
        P = synth_prob_dataset(7, 200, 6)
        ids = [f"s{i}" for i in range(200)]
        io.write_probs(tmp_path / "p.csv", ids, np.argmax(P, axis=1), P)
        cfg = write_config(tmp_path, "c.json", {
            "sigma": 0.5, "partition": [[0, 1, 2, 3, 4, 5]],
            "probs": {"probs": "p.csv"}, "radius_thresholds": [0.25, 0.5],
        })
        assert cli.main(["hierarchy", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        lines = (tmp_path / "out" / "hierarchy_certificates.csv").read_text().splitlines()
        row = lines[1].split(",")
        cols = lines[0].split(",")
        base_mean = float(row[cols.index("baseline_cr_mean")])
        hier_mean = float(row[cols.index("hierarchy_cr_mean")])
        assert hier_mean == pytest.approx(base_mean, abs=1e-12)

    def test_two_class_partition_improves_mean_radius(self, tmp_path):
        P = synth_prob_dataset(8, 400, 10)
        ids = [f"s{i}" for i in range(400)]
        io.write_probs(tmp_path / "p.csv", ids, np.argmax(P, axis=1), P)
        cfg = write_config(tmp_path, "c.json", {
            "sigma": 0.5, "partition": [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]],
            "probs": {"probs": "p.csv"},
        })
        assert cli.main(["hierarchy", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        lines = (tmp_path / "out" / "hierarchy_certificates.csv").read_text().splitlines()
        cols = lines[0].split(",")
        for line in lines[1:]:
            row = line.split(",")
            assert (float(row[cols.index("hierarchy_cr_mean")])
                    >= float(row[cols.index("baseline_cr_mean")]))

    def test_attack_section_runs(self, tmp_path):
        X, y = make_blobs(9, 30, [(-3, -1), (-3, 1), (3, 0)], spread=0.3)
        base = train(LinearSoftmax.init(3, 2, seed=1), X, y, epochs=200, learning_rate=0.5)
        root = train(LinearSoftmax.init(2, 2, seed=2), X, (y == 2).astype(int),
                     epochs=200, learning_rate=0.5)
        h = build_renormalize_hierarchy(LabelPartition(((0, 1), (2,))), root, base)
        io.save_hierarchy(tmp_path / "h.json", h)
        ids = [f"s{i}" for i in range(len(y))]
        io.write_features(tmp_path / "d.csv", ids, y, X)
        cfg = write_config(tmp_path, "c.json", {
            "seed": 5, "hierarchy": "h.json", "dataset": {"features": "d.csv"},
            "attack": {"mode": "budgeted", "budget_target": "worst",
                       "epsilon": 0.1, "step": 0.05, "iters": 5},
        })
        assert cli.main(["hierarchy", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        lines = (tmp_path / "out" / "adversarial_accuracy.csv").read_text().splitlines()
        assert lines[0] == "node,natural_acc,adv_acc,budget_acc"
        assert len(lines) >= 4  # summary + one row per node

    def test_nothing_to_do_rejected(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"sigma": 0.5})
        assert cli.main(["hierarchy", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


class TestToyCommands:
    def test_prf_scenarios(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"seed": 11, "n_trials": 4000})
        assert cli.main(["toy-prf", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        lines = (tmp_path / "out" / "prf_scenarios.csv").read_text().splitlines()
        rows = {line.split(",")[0]: line.split(",") for line in lines[1:]}
        assert float(rows["clean"][3]) == 1.0 and float(rows["clean"][4]) == 1.0
        assert float(rows["first_bit_attack"][3]) == 1.0
        assert abs(float(rows["first_bit_attack"][4]) - 0.5) < 0.05
        assert float(rows["invariant_enforced"][4]) == 1.0

    def test_gauss_with_tradeoff(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {
            "seed": 12, "d": 100, "eta_list": [0.3], "k_list": [0, 100],
            "n_samples": 20000, "tradeoff": {"gamma": 0.01, "eta": 0.3},
        })
        assert cli.main(["toy-gauss", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        lines = (tmp_path / "out" / "tradeoff.csv").read_text().splitlines()
        row = lines[1].split(",")
        natural, adv, bound = float(row[3]), float(row[4]), float(row[5])
        se = math.sqrt(bound * (1 - bound) / 20000)
        assert natural == pytest.approx(0.99, abs=0.01)
        assert adv <= bound + 3 * se
