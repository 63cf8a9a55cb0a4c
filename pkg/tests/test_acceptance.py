"""Acceptance gate: one test per shipped guarantee, at contract scale.

Every test checks both the substance (tolerances against independent
oracles, or directional outcomes on stub corpora) and its runtime budget.
Run with ``pytest -v tests/test_acceptance.py`` for one pass/fail line per
guarantee.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from cytodiff.attention import adapter_for_block, make_reference_block
from cytodiff.cli import main as cli_main
from cytodiff.dataset import (
    DatasetManifest,
    ImageRecord,
    Origin,
    Split,
    build_registry,
    stratified_kfold,
)
from cytodiff.experiments import (
    ExperimentConfig,
    rerun_from_manifest,
    run_regime,
    run_scaling_sweep,
)
from cytodiff.lora import (
    LinearProjection,
    LoraAdapter,
    LoraEntry,
    adapted_forward,
    base_forward,
    init_adapter,
    merge,
)
from cytodiff.metrics import (
    ConfusionMatrix,
    FeatureDistribution,
    auc_ovr,
    frechet_distance,
    macro_f1,
    per_class_f1,
)
from cytodiff.training import TrainConfig, combined_loss, cosine_warmup_lr

from conftest import make_stub_corpus
from oracles import (
    central_difference_grad,
    oracle_auc_pairwise,
    oracle_combined_loss,
    oracle_frechet,
    oracle_macro_f1,
    oracle_per_class_f1,
    random_confusion,
    random_psd,
)

FAST = TrainConfig(
    lr_init=5e-3,
    lr_min=1e-5,
    warmup_epochs=1,
    total_epochs=3,
    batch_train=16,
    batch_eval=32,
    seed=0,
)


def test_lora_zero_init_neutrality_and_merge_equivalence():
    rng = np.random.default_rng(42)
    started = time.perf_counter()
    for case in range(100):
        d_out = int(rng.integers(2, 65))
        d_in = int(rng.integers(2, 65))
        rank = int(rng.integers(1, min(d_out, d_in, 8) + 1))
        # O(1) weight scale keeps outputs O(1), so the elementwise bound is
        # meaningful rather than trivially loose or tight
        weight = (rng.normal(size=(d_out, d_in)) / np.sqrt(d_in)).astype(np.float32)
        bias = rng.normal(size=d_out).astype(np.float32) if case % 2 else None
        proj = LinearProjection(name="p", weight=weight, bias=bias)
        x = rng.normal(size=(4, d_in)).astype(np.float32)

        fresh = init_adapter([("p", d_out, d_in)], rank=rank, scale=16.0, seed=case)
        np.testing.assert_array_equal(
            adapted_forward(x, proj, fresh), base_forward(x, proj)
        )

        adapter = LoraAdapter(
            rank=rank,
            scale=float(rng.uniform(0.5, 32.0)),
            targets={
                "p": LoraEntry(
                    down=rng.normal(0.0, 0.02, size=(rank, d_in)).astype(np.float32),
                    up=rng.normal(0.0, 0.02, size=(d_out, rank)).astype(np.float32),
                )
            },
        )
        np.testing.assert_allclose(
            adapted_forward(x, proj, adapter),
            base_forward(x, merge(proj, adapter)),
            rtol=1e-6,
            atol=1e-6,
        )
    assert time.perf_counter() - started < 5.0


def test_adapter_gradients_match_finite_differences():
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    block = make_reference_block(d_model=8, n_heads=2, seed=3, dtype=np.float64)
    adapter = adapter_for_block(block, rank=2, scale=4.0, seed=5, dtype=np.float64)
    for entry in adapter.targets.values():
        entry.up[...] = rng.normal(0.0, 0.05, size=entry.up.shape)
    x = rng.normal(size=(2, 5, 8))

    out, cache = block.forward(x, adapter=adapter, want_cache=True)
    grads = block.adapter_gradients(cache, out, adapter)

    worst = 0.0
    for name, entry in adapter.targets.items():
        g_down, g_up = grads[name]
        for got, param in ((g_down, entry.down), (g_up, entry.up)):

            def loss_fn(_param):
                # the float64 view shares the adapter's buffer, so the
                # perturbation is visible to the forward pass
                y = block.forward(x, adapter=adapter)
                return 0.5 * float(np.sum(y * y))

            fd = central_difference_grad(loss_fn, param, eps=1e-3)
            denom = np.maximum(np.abs(fd), 1.0)
            worst = max(worst, float(np.max(np.abs(got - fd) / denom)))
    assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"
    assert time.perf_counter() - started < 10.0


def test_frechet_distance_closed_forms_and_sampling():
    started = time.perf_counter()
    rng = np.random.default_rng(11)

    # identity covariances: distance reduces to the squared mean gap
    for dim in (3, 8, 16):
        mu_a = rng.normal(size=dim)
        mu_b = rng.normal(size=dim)
        a = FeatureDistribution(mean=mu_a, cov=np.eye(dim))
        b = FeatureDistribution(mean=mu_b, cov=np.eye(dim))
        gap = float(np.sum((mu_a - mu_b) ** 2))
        assert frechet_distance(a, b) == pytest.approx(gap, abs=1e-9)
        assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-9)

    # eigendecomposition route vs the general matrix square root
    for dim in range(3, 17):
        a = FeatureDistribution(mean=rng.normal(size=dim), cov=random_psd(rng, dim))
        b = FeatureDistribution(mean=rng.normal(size=dim), cov=random_psd(rng, dim))
        ours = frechet_distance(a, b)
        ref = oracle_frechet(a.mean, a.cov, b.mean, b.cov)
        assert ours == pytest.approx(ref, rel=1e-6, abs=1e-6)

    # Gaussian samples recover the population distance to within 10%
    dim, n = 8, 5000
    mu_a = rng.normal(size=dim)
    mu_b = mu_a + rng.normal(scale=0.5, size=dim)
    cov_a = random_psd(rng, dim)
    cov_b = random_psd(rng, dim)
    population = frechet_distance(
        FeatureDistribution(mean=mu_a, cov=cov_a),
        FeatureDistribution(mean=mu_b, cov=cov_b),
    )
    sample_a = rng.multivariate_normal(mu_a, cov_a, size=n)
    sample_b = rng.multivariate_normal(mu_b, cov_b, size=n)
    estimated = frechet_distance(
        FeatureDistribution.from_features(sample_a),
        FeatureDistribution.from_features(sample_b),
    )
    assert abs(estimated - population) / population < 0.10
    assert time.perf_counter() - started < 30.0


def test_macro_f1_and_auc_match_bruteforce_oracles():
    started = time.perf_counter()
    rng = np.random.default_rng(23)

    for _ in range(1000):
        counts = random_confusion(rng, int(rng.integers(2, 11)))
        cm = ConfusionMatrix(counts)
        # per-class F1 is arithmetic-identical in both routes; the macro
        # average differs only by float summation order (one ulp)
        assert list(per_class_f1(cm)) == oracle_per_class_f1(counts)
        assert macro_f1(cm) == pytest.approx(oracle_macro_f1(counts), rel=1e-15)

    for trial in range(60):
        n = int(rng.integers(5, 201))
        n_classes = int(rng.integers(2, 6))
        y = rng.integers(0, n_classes, size=n)
        # coarse score grid forces plenty of exact ties
        scores = rng.integers(0, 8, size=(n, n_classes)) / 7.0
        result = auc_ovr(y, scores)
        for c, got in result.per_class.items():
            want = oracle_auc_pairwise(y, scores, c)
            assert got == want, f"class {c}: {got!r} != {want!r}"
        for c in result.skipped:
            assert oracle_auc_pairwise(y, scores, c) is None
    assert time.perf_counter() - started < 30.0


def test_combined_loss_identity_and_cosine_schedule():
    started = time.perf_counter()
    rng = np.random.default_rng(31)

    assert combined_loss(2.0, 1.0, 300, 700, 0.3) == pytest.approx(0.67, abs=1e-12)
    for _ in range(1000):
        lr_, ls_ = rng.uniform(0.0, 5.0, size=2)
        nr = int(rng.integers(0, 2000))
        ns = int(rng.integers(0, 2000))
        if nr + ns == 0:
            nr = 1
        lam = float(rng.uniform(0.0, 1.0))
        got = combined_loss(lr_, ls_, nr, ns, lam)
        assert abs(got - oracle_combined_loss(lr_, ls_, nr, ns, lam)) <= 1e-12

    cfg = TrainConfig()
    assert cosine_warmup_lr(0, cfg) == 0.0
    assert cosine_warmup_lr(30, cfg) == 1e-4
    assert cosine_warmup_lr(100, cfg) == 1e-8
    mid = cosine_warmup_lr(65, cfg)
    assert abs(mid - 5.0005e-5) / 5.0005e-5 < 1e-9
    assert time.perf_counter() - started < 1.0


def test_stratified_splits_stay_balanced_and_leak_free():
    started = time.perf_counter()
    registry = build_registry(["alpha", "beta", "gamma"])
    by_name = {lbl.name: lbl for lbl in registry}
    sizes = {"alpha": 500, "beta": 50, "gamma": 10}
    records = tuple(
        ImageRecord(path=f"mem/{name}/{i:04d}.png", label=by_name[name], origin=Origin.REAL)
        for name, n in sizes.items()
        for i in range(n)
    )
    manifest = DatasetManifest(registry=registry, records=records)
    fractions = (0.6, 0.2, 0.2)
    all_paths = {r.path for r in records}

    for seed in np.random.default_rng(7).integers(0, 2**31 - 1, size=50):
        for assignment in stratified_kfold(manifest, 5, fractions, int(seed)):
            assert set(assignment.splits) == all_paths
            buckets = {s: set() for s in (Split.TRAIN, Split.VALIDATION, Split.TEST)}
            for path, split in assignment.splits.items():
                buckets[split].add(path)
            assert (
                buckets[Split.TRAIN] | buckets[Split.VALIDATION] | buckets[Split.TEST]
            ) == all_paths
            assert not buckets[Split.TRAIN] & buckets[Split.VALIDATION]
            assert not buckets[Split.TRAIN] & buckets[Split.TEST]
            assert not buckets[Split.VALIDATION] & buckets[Split.TEST]
            for name, n in sizes.items():
                prefix = f"mem/{name}/"
                for split, frac in zip(
                    (Split.TRAIN, Split.VALIDATION, Split.TEST), fractions
                ):
                    got = sum(1 for p in buckets[split] if p.startswith(prefix))
                    assert abs(got - frac * n) <= 1.0, (
                        f"seed {seed} fold {assignment.fold_id} {name} {split.value}: "
                        f"{got} vs target {frac * n}"
                    )
    assert time.perf_counter() - started < 5.0


def test_synthetic_images_rescue_starved_minority_classes(tmp_path):
    started = time.perf_counter()
    real = tmp_path / "real"
    pool = tmp_path / "pool"
    # 0.6/0.2/0.2 fractions put 300/30/6 of these in each training split
    make_stub_corpus(real, {"alpha": 500, "beta": 50, "gamma": 10}, seed0=10_000)
    make_stub_corpus(pool, {"alpha": 300, "beta": 300, "gamma": 300}, seed0=50_000)

    config = ExperimentConfig(
        data_root=str(real),
        out_dir=str(tmp_path / "sweep"),
        schedule=(0, 100, 300),
        synth_root=str(pool),
        folds=5,
        seed=0,
        train=TrainConfig(
            lr_init=5e-3,
            lr_min=1e-5,
            warmup_epochs=2,
            total_epochs=20,
            batch_train=32,
            batch_eval=64,
            seed=0,
        ),
    )
    outcome = run_scaling_sweep(config)

    macro = [pt.test.mean["macro_f1"] for pt in outcome.points]
    minority = [pt.test.mean["f1_gamma"] for pt in outcome.points]
    # schedule point 0 shares folds and seeds with the real-only regime, so
    # it IS the real-only baseline
    improvement = macro[2] - macro[0]
    assert improvement >= 0.15, f"macro-F1 gain {improvement:.3f} (points {macro})"
    assert all(b >= a for a, b in zip(minority, minority[1:])), (
        f"minority F1 not non-decreasing: {minority}"
    )
    assert time.perf_counter() - started < 600.0


def test_rerun_from_manifest_reproduces_metrics_bit_for_bit(small_corpus, synth_pool, tmp_path):
    regime_cfg = ExperimentConfig(
        data_root=str(small_corpus),
        out_dir=str(tmp_path / "regime"),
        folds=2,
        seed=5,
        train=FAST,
    )
    outcome = run_regime(regime_cfg)
    rerun_from_manifest(outcome.outputs["manifest"], tmp_path / "regime_again")
    for name in ("fold_metrics.csv", "report.csv"):
        assert (tmp_path / "regime" / name).read_bytes() == (
            tmp_path / "regime_again" / name
        ).read_bytes(), name

    sweep_cfg = ExperimentConfig(
        data_root=str(small_corpus),
        out_dir=str(tmp_path / "sweep"),
        schedule=(0, 4),
        synth_root=str(synth_pool),
        folds=2,
        seed=5,
        train=FAST,
    )
    sweep_outcome = run_scaling_sweep(sweep_cfg)
    rerun_from_manifest(sweep_outcome.outputs["manifest"], tmp_path / "sweep_again")
    for name in ("sweep.csv", "fold_metrics.csv"):
        assert (tmp_path / "sweep" / name).read_bytes() == (
            tmp_path / "sweep_again" / name
        ).read_bytes(), name


def test_full_pipeline_from_generation_to_report(small_corpus, tmp_path):
    started = time.perf_counter()
    adapter_path = tmp_path / "gamma.lora"
    synth_root = tmp_path / "synth"
    fast_flags = [
        "--epochs", "3", "--warmup", "1", "--lr", "5e-3",
        "--batch", "16", "--batch-eval", "32", "--folds", "2",
    ]

    assert cli_main([
        "lora-train", "--class", "gamma", "--data-root", str(small_corpus),
        "--shots", "1", "--out", str(adapter_path), "--rank", "2", "--steps", "8",
        "--d-model", "16", "--heads", "2", "--resolution", "16", "--seed", "3",
    ]) == 0

    for index, name in enumerate(["alpha", "beta", "gamma"]):
        assert cli_main([
            "generate", "--class", name, "--data-root", str(small_corpus),
            "--adapter", str(adapter_path), "--count", "10",
            "--seed", str(100 + index), "--resolution", "32",
            "--out", str(synth_root),
        ]) == 0
        assert len(list((synth_root / name).glob("*.png"))) == 10

    manifest_path = tmp_path / "real.jsonl"
    assert cli_main([
        "dataset", "scan", "--root", str(small_corpus), "--out", str(manifest_path),
    ]) == 0
    merged_path = tmp_path / "merged.jsonl"
    assert cli_main([
        "dataset", "merge-synth", "--manifest", str(manifest_path),
        "--synth-root", str(synth_root), "--per-class", "8",
        "--out", str(merged_path),
    ]) == 0

    run_dir = tmp_path / "run"
    assert cli_main([
        "train", "--data-root", str(small_corpus), "--out", str(run_dir),
        "--regime", "mixed", "--per-class", "8", "--synth-root", str(synth_root),
        "--seed", "3",
    ] + fast_flags) == 0

    report_csv = (run_dir / "report.csv").read_text().splitlines()
    assert report_csv[0] == "Model,Split,Dataset,Accuracy,F1_macro,AUC"
    assert len(report_csv) == 3
    for line in report_csv[1:]:
        cells = line.split(",")
        assert cells[2] == "real+synthetic(8/class)"
        for cell in cells[3:]:
            mean, std = cell.split("±")
            assert 0.0 <= float(mean) <= 1.0 and float(std) >= 0.0

    fold_dir = tmp_path / "fold"
    assert cli_main([
        "train", "--data-root", str(small_corpus), "--out", str(fold_dir),
        "--seed", "3", "--fold", "0",
    ] + fast_flags) == 0
    splits_dir = tmp_path / "folds"
    assert cli_main([
        "dataset", "split", "--manifest", str(manifest_path), "--k", "2",
        "--seed", "3", "--out", str(splits_dir),
    ]) == 0
    assert cli_main([
        "evaluate", "--checkpoint", str(fold_dir / "fold0.ckpt"),
        "--manifest", str(splits_dir / "fold0.jsonl"), "--split", "test",
    ]) == 0

    sweep_dir = tmp_path / "sweep"
    assert cli_main([
        "sweep", "--data-root", str(small_corpus), "--out", str(sweep_dir),
        "--schedule", "0,8", "--synth-root", str(synth_root), "--seed", "3",
    ] + fast_flags) == 0
    plot = sweep_dir / "sweep_accuracy.png"
    assert plot.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    reemit_dir = tmp_path / "reemit"
    assert cli_main([
        "report", "--run-dir", str(run_dir), "--out", str(reemit_dir),
    ]) == 0
    assert (reemit_dir / "report.csv").read_bytes() == (run_dir / "report.csv").read_bytes()

    doc = json.loads((run_dir / "run_manifest.json").read_text())
    assert doc["complete"] is True
    assert time.perf_counter() - started < 900.0
