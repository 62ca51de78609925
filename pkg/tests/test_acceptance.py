"""Acceptance gate: one test per criterion, each with its tolerance and time budget.

A summary line per criterion is printed at the end of the run (see conftest.py).
"""

import hashlib
import itertools
import json
import math
import time

import numpy as np
import pytest

from mriclf.cli import main
from mriclf.cnn import ArchDescriptor, TrainConfig, build_model, conv3d, train
from mriclf.cnn import layers as L
from mriclf.cnn.model import backward, forward, loss_and_grads, prepare_input
from mriclf.cnn.saliency import input_gradient
from mriclf.dataset import mixup_augment
from mriclf.errors import NoDisagreement
from mriclf.stats import ContingencyTable, ScoredSet, auc, corrected_resampled_ci, mcnemar, naive_t_ci
from mriclf.svm import (
    analytic_pmap,
    coefficient_matrix,
    decision_scores,
    permutation_moments,
    predict_labels,
    primal_objective,
    train_linear_svm,
)

from test_cnn import naive_conv, positive_network
from test_stats import pair_auc
from test_svm import projected_gradient_reference, random_problem

# Desk-scale CNN settings for the synthetic cohort. At 24^3 the last blocks see
# 1-voxel maps, where dropout 0.2 with slow batchnorm statistics stalls training.
DESK_CNN = {"dropout_rate": 0.0, "bn_momentum": 0.9, "target_per_class": 48, "max_epochs": 12}


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"


def cli(*args):
    return main([str(a) for a in args])


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.mark.criterion(1, "kernel-oracle equivalence")
def test_kernel_oracle():
    rng = np.random.default_rng(2024)
    with Budget(30):
        strides = []
        for trial in range(20):
            stride = 2 if trial % 2 else 1
            dims = tuple(int(d) for d in rng.integers(3, 8, size=3))
            if trial < 4:
                dims = (5, 7, 3)  # all odd
            n, c, o = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
            x = rng.standard_normal((n, c) + dims)
            k = rng.standard_normal((o, c, 3, 3, 3))
            b = rng.standard_normal(o)
            assert np.abs(conv3d(x, k, b, stride) - naive_conv(x, k, b, stride)).max() < 1e-5
            strides.append(stride)
        assert set(strides) == {1, 2}


@pytest.mark.criterion(2, "gradient integrity")
def test_gradient_integrity():
    with Budget(120):
        rng = np.random.default_rng(7)
        m = build_model(7, dtype=np.float64, dropout_rate=0.0, bn_momentum=0.0)
        for k in m.params:
            if k.endswith(".b") or k.endswith(".beta"):
                m.params[k][:] = rng.normal(0, 0.1, m.params[k].shape)
            elif k.endswith(".gamma"):
                m.params[k][:] = rng.uniform(0.5, 1.5, m.params[k].shape)
        # running statistics from one training-mode pass, so inference-mode
        # batchnorm sees activations on the scale it normalizes for
        forward(m, prepare_input(m, rng.standard_normal((16, 8, 8, 8))), training=True, keep_cache=False)
        x = prepare_input(m, rng.standard_normal((2, 8, 8, 8)))
        targets = np.eye(2)[[0, 1]]

        def loss():
            probs, _, _ = forward(m, x, training=False, keep_cache=False)
            return L.bce_loss(probs, targets)

        probs, _, cache = forward(m, x, training=False)
        grads, _ = backward(m, L.softmax_backward(L.bce_backward(probs, targets), probs), cache)
        groups = {
            "conv kernel": [k for k in m.params if ".conv" in k and k.endswith(".w")],
            "conv bias": [k for k in m.params if ".conv" in k and k.endswith(".b")],
            "bn scale": [k for k in m.params if k.endswith(".gamma")],
            "bn shift": [k for k in m.params if k.endswith(".beta")],
            "head weight": ["head.w"],
            "head bias": ["head.b"],
        }
        # 1e-5 keeps the central difference inside one linear piece of the
        # ReLU network; wider steps straddle kinks
        h = 1e-5
        worst = {}
        for group, names in groups.items():
            cands = [(n, i) for n in names for i in range(m.params[n].size)]
            picks = rng.choice(len(cands), size=min(50, len(cands)), replace=False)
            errs = []
            for p in picks:
                name, i = cands[p]
                flat = m.params[name].reshape(-1)
                old = flat[i]
                flat[i] = old + h
                up = loss()
                flat[i] = old - h
                down = loss()
                flat[i] = old
                fd = (up - down) / (2 * h)
                an = grads[name].reshape(-1)[i]
                errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-12))
            worst[group] = max(errs)
        assert max(worst.values()) < 1e-3, worst


@pytest.mark.criterion(3, "parameter count")
def test_parameter_count():
    with Budget(1):
        m = build_model(0)
        counts = []
        for n in (24, 32):
            x = prepare_input(m, np.zeros((2, n, n, n), dtype=np.float32))
            _, grads, _ = loss_and_grads(m, x, np.eye(2), training=True)
            counts.append(sum(g.size for g in grads.values()))
        assert counts[0] == counts[1] == m.parameter_count()
        assert abs(counts[0] - 577_498) / 577_498 < 0.05


@pytest.mark.criterion(4, "AUC exactness")
def test_auc_exactness():
    rng = np.random.default_rng(4)
    with Budget(10):
        for _ in range(200):
            n = int(rng.integers(2, 80))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = [0, 1]
            scores = np.round(rng.standard_normal(n), 1)  # one decimal place: many ties
            s = ScoredSet.build(range(n), labels, scores)
            assert auc(s) == pytest.approx(pair_auc(labels, scores), abs=1e-12)


@pytest.mark.criterion(5, "corrected resampled t-test")
def test_corrected_resampled():
    with Budget(1):
        v = np.random.default_rng(5).normal(0.85, 0.04, 20)
        corr = corrected_resampled_ci(v, 900, 100)
        naive = naive_t_ci(v)
        ratio = (corr.upper - corr.point) / (naive.upper - naive.point)
        assert abs(ratio - 1.795) <= 0.001
        flat = corrected_resampled_ci([0.9] * 20, 900, 100)
        assert flat.upper - flat.lower == 0.0


@pytest.mark.criterion(6, "McNemar")
def test_mcnemar():
    with Budget(1):
        stat, p = mcnemar(ContingencyTable(40, 15, 5, 40))
        assert stat == pytest.approx(4.05, abs=1e-12)
        assert abs(p - math.erfc(math.sqrt(4.05 / 2))) < 1e-12
        assert abs(p - 0.0441) <= 0.0005
        stat, p = mcnemar(ContingencyTable(40, 10, 10, 40))
        assert stat == pytest.approx(0.05, abs=1e-12)
        assert abs(p - 0.823) <= 0.001
        with pytest.raises(NoDisagreement):
            mcnemar(ContingencyTable(50, 0, 0, 50))


@pytest.mark.criterion(7, "p-map fidelity")
def test_pmap_fidelity():
    rng = np.random.default_rng(7)
    with Budget(300):
        diffs = []
        for trial in range(20):
            X, y = random_problem(16, 10, 500 + trial)
            pm = analytic_pmap(X, y)
            K = coefficient_matrix(X)
            mean, _ = permutation_moments(K, y)
            perms = np.argsort(rng.random((20_000, 16)), axis=1)
            null = K @ y[perms].T
            observed = np.abs(pm.weights - mean)[:, None]
            p_mc = (np.abs(null - mean[:, None]) >= observed - 1e-12).mean(axis=1)
            diffs.append(np.abs(p_mc - pm.p))
        assert np.mean(diffs) < 0.05

        c = rng.standard_normal(6)
        for yv in ([1, 1, 1, -1, -1, -1], [1, -1, -1, -1, -1, -1]):
            yv = np.asarray(yv, dtype=float)
            vals = np.array([c @ yv[list(p)] for p in itertools.permutations(range(6))])
            m, v = permutation_moments(c, yv)
            assert m == pytest.approx(vals.mean(), abs=1e-12)
            assert v == pytest.approx(vals.var(), rel=1e-12)


@pytest.mark.criterion(8, "SVM solver")
def test_svm_solver():
    with Budget(120):
        for seed in range(20):
            X, y = random_problem(40, 30, 1000 + seed)
            C = [0.01, 0.1, 1.0][seed % 3]
            m = train_linear_svm(X, y, C, seed=seed)
            ours = primal_objective(m.w, m.b, C, m.standardizer.transform(X), y)
            ref = projected_gradient_reference(X, y, C, iters=30000)
            assert abs(ours - ref) / ref < 1e-4, (seed, ours, ref)

        m = train_linear_svm(np.array([[-1.0], [1.0]]), np.array([-1, 1]), 1e3, standardize=False)
        assert abs(float(m.w[0]) - 1) < 1e-3 and abs(m.b) < 1e-3

        X, y = random_problem(80, 20, 9, shift=5.0)
        m = train_linear_svm(X, y, 1e3)
        assert np.mean(predict_labels(decision_scores(m, X)) == y) == 1.0


@pytest.fixture(scope="module")
def cohort60(tmp_path_factory):
    root = tmp_path_factory.mktemp("c60")
    cfg = write_json(root / "synth.json", {"synth": {"n_per_class": 60, "dims": [24, 24, 24],
                                                     "effect_size": 0.3, "noise_sigma": 0.05}, "seed": 0})
    assert cli("synth", "--config", cfg, "--out", root) == 0
    return root / "synth"


@pytest.mark.slow
@pytest.mark.criterion(9, "end-to-end synthetic pipeline")
def test_end_to_end(cohort60, tmp_path):
    with Budget(1200):
        base = json.loads((cohort60 / "experiment.json").read_text())
        base.update(split={"iterations": 5, "train_fraction": 0.9}, cnn=DESK_CNN, seed=0)
        svm_cfg = write_json(cohort60 / "e2e_svm.json", {**base, "classifiers": ["svm"],
                                                         "pipelines": ["minimal", "modulated"]})
        cnn_cfg = write_json(cohort60 / "e2e_cnn.json", {**base, "classifiers": ["cnn"], "pipelines": ["modulated"]})
        assert cli("cv", "--config", svm_cfg, "--out", tmp_path / "svm") == 0
        assert cli("cv", "--config", cnn_cfg, "--out", tmp_path / "cnn") == 0
        svm = json.loads((tmp_path / "svm/cv/summary.json").read_text())
        cnn = json.loads((tmp_path / "cnn/cv/summary.json").read_text())
        # one split plan across both runs
        assert svm["splits"] == cnn["splits"]
        auc_svm_mod = svm["results"]["svm_modulated"]["metrics"]["auc"]["mean"]
        auc_svm_min = svm["results"]["svm_minimal"]["metrics"]["auc"]["mean"]
        auc_cnn_mod = cnn["results"]["cnn_modulated"]["metrics"]["auc"]["mean"]
        print(f"AUC svm/modulated {auc_svm_mod:.3f} svm/minimal {auc_svm_min:.3f} cnn/modulated {auc_cnn_mod:.3f}")
        assert auc_svm_mod >= 0.85
        assert auc_cnn_mod >= 0.85
        assert auc_svm_mod >= auc_svm_min


@pytest.mark.slow
@pytest.mark.criterion(10, "null-signal sanity")
def test_null_signal(tmp_path):
    with Budget(600):
        cfg = write_json(tmp_path / "synth.json", {"synth": {"n_per_class": 60, "effect_size": 0.0}, "seed": 3})
        assert cli("synth", "--config", cfg, "--out", tmp_path) == 0
        base = json.loads((tmp_path / "synth/experiment.json").read_text())
        base.update(classifiers=["svm"], pipelines=["modulated"])
        exp = write_json(tmp_path / "synth/null.json", base)
        assert cli("cv", "--config", exp, "--out", tmp_path / "out") == 0
        summary = json.loads((tmp_path / "out/cv/summary.json").read_text())
        ci = summary["results"]["svm_modulated"]["metrics"]["auc"]["ci"]
        print(f"null AUC CI [{ci['lower']:.3f}, {ci['upper']:.3f}]")
        assert summary["iterations"] == 20
        assert ci["lower"] <= 0.5 <= ci["upper"]


def tree_digest(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.mark.slow
@pytest.mark.criterion(11, "determinism")
def test_determinism(tmp_path):
    with Budget(600):
        synth = write_json(tmp_path / "synth.json", {"synth": {"n_per_class": 20, "dims": [16, 16, 16],
                                                               "effect_size": 0.4}, "seed": 5})
        for run in ("a", "b"):
            assert cli("synth", "--config", synth, "--out", tmp_path / run) == 0
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

        data = tmp_path / "a/synth"
        base = json.loads((data / "experiment.json").read_text())
        base.update(split={"iterations": 2, "train_fraction": 0.8},
                    cnn={**DESK_CNN, "target_per_class": 32, "max_epochs": 8, "validation_fraction": 0.3},
                    svm={"c_grid": [0.01, 1.0], "folds": 3}, stats={"bootstrap_samples": 100},
                    test={"manifests": {"minimal": "manifest_minimal.csv", "modulated": "manifest_modulated.csv"}})
        exp = write_json(data / "det.json", base)
        for run in ("r1", "r2"):
            out = tmp_path / run
            for cmd in ("cv", "train", "test", "map"):
                assert cli(cmd, "--config", exp, "--out", out) == 0
            sal = write_json(data / f"det_saliency_{run}.json", {**base, "map": {
                "kind": "saliency", "model": str(out / "train/cnn_modulated/model.json")}})
            assert cli("map", "--config", sal, "--out", out / "saliency") == 0
        first, second = tree_digest(tmp_path / "r1"), tree_digest(tmp_path / "r2")
        assert "saliency/map/cnn_modulated/map_saliency.raw" in first
        assert first == second


@pytest.mark.criterion(12, "early stopping")
def test_early_stopping():
    with Budget(60):
        rng = np.random.default_rng(12)
        y = np.array([0, 1] * 4)
        x = rng.standard_normal((8, 8, 8, 8)).astype(np.float32)
        k = 7
        seq = [0.5 + 0.05 * e for e in range(k + 1)] + [0.5 + 0.05 * k] * 100
        snapshots = []

        def scorer(model):
            snapshots.append({n: v.copy() for n, v in model.params.items()})
            return seq[len(snapshots) - 1]

        cfg = TrainConfig(target_per_class=2, max_epochs=200)
        assert cfg.patience == 20
        best, records = train(build_model(0, ArchDescriptor(channels=(2,) * 7)), x[:6], y[:6], x[6:], y[6:], cfg,
                              val_scorer=scorer)
        assert records[-1].epoch == k + 20
        assert best.meta["best_epoch"] == k
        for name, v in best.params.items():
            assert v.tobytes() == snapshots[k][name].tobytes()
        assert any(snapshots[k + 1][n].tobytes() != v.tobytes() for n, v in best.params.items())


@pytest.mark.criterion(13, "guided backprop gating")
def test_guided_gating():
    with Budget(10):
        m = positive_network()
        x = np.random.default_rng(13).uniform(0.1, 1.0, size=(2, 8, 8, 8))
        guided = input_gradient(m, x, guided=True)
        plain = input_gradient(m, x, guided=False)
        assert np.any(plain != 0)
        np.testing.assert_array_equal(guided, plain)

        dout = np.array([-0.7, 0.4, -1e-9, 2.0])
        pre = np.array([1.0, 1.0, 3.0, 2.0])
        gated = L.relu_backward(dout, pre, guided=True)
        assert gated[0] == 0.0 and gated[2] == 0.0
        np.testing.assert_array_equal(gated[[1, 3]], dout[[1, 3]])


@pytest.mark.criterion(14, "mixup")
def test_mixup():
    with Budget(10):
        rng = np.random.default_rng(14)
        samples = [(rng.standard_normal((4, 4, 4)), i % 2) for i in range(10)]
        aug = mixup_augment(samples, 1000, lam=0.8, seed=14)
        assert (aug.labels == 0).sum() == 1000 and (aug.labels == 1).sum() == 1000
        for vol, (a, b), lab in zip(aug.volumes, aug.provenance, aug.labels):
            va = samples[int(a)][0].astype(np.float32).astype(np.float64)
            vb = samples[int(b)][0].astype(np.float32).astype(np.float64)
            assert samples[int(a)][1] == samples[int(b)][1] == lab
            np.testing.assert_array_equal(vol, (0.8 * va + (1 - 0.8) * vb).astype(np.float32))
            assert np.all(vol >= np.minimum(va, vb).astype(np.float32))
            assert np.all(vol <= np.maximum(va, vb).astype(np.float32))

        single = rng.standard_normal((4, 4, 4)).astype(np.float32)
        aug = mixup_augment([(single, 0)] + samples[1::2], 50, seed=1)
        for vol in aug.volumes[aug.labels == 0]:
            np.testing.assert_array_equal(vol, single)
