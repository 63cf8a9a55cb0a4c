"""Corpus scanning, stratified assignment, few-shot selection, augmentation."""

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from cytodiff.dataset import (
    AugmentationPolicy,
    DatasetManifest,
    FewShotSelection,
    ImageRecord,
    Origin,
    SelectionMode,
    Split,
    SplitAssignment,
    apply_augmentation,
    augmentation_rng,
    bake_assignment,
    build_registry,
    discover_class_names,
    load_image,
    load_manifest,
    merge_synthetic,
    registry_names,
    save_manifest,
    scan_corpus,
    select_few_shot,
    stratified_kfold,
)
from cytodiff.errors import ConfigError, DataError

from conftest import make_stub_corpus, scan_stub_corpus

SIZES = {"alpha": 40, "beta": 12, "gamma": 6}


@pytest.fixture(scope="module")
def manifest(small_corpus):
    return scan_stub_corpus(small_corpus)


class TestRegistry:
    def test_indices_are_contiguous(self):
        reg = build_registry(["a", "b", "c"])
        assert [(c.name, c.index) for c in reg] == [("a", 0), ("b", 1), ("c", 2)]
        assert registry_names(reg) == ("a", "b", "c")

    def test_too_few_classes_rejected(self):
        with pytest.raises(ConfigError, match="at least 2"):
            build_registry(["only"])

    def test_duplicates_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            build_registry(["a", "b", "a"])


class TestScan:
    def test_counts_and_total(self, manifest):
        assert manifest.total == sum(SIZES.values())
        assert manifest.class_counts == {k: (v, 0) for k, v in SIZES.items()}

    def test_records_are_sorted_real_images(self, manifest):
        for rec in manifest.records:
            assert rec.origin is Origin.REAL
            assert rec.split is Split.UNASSIGNED
        alpha_paths = [r.path for r in manifest.records_for("alpha")]
        assert alpha_paths == sorted(alpha_paths)

    def test_discover_is_sorted(self, small_corpus):
        assert discover_class_names(small_corpus) == ("alpha", "beta", "gamma")

    def test_scan_is_deterministic(self, small_corpus, manifest):
        again = scan_stub_corpus(small_corpus)
        assert again.content_digest() == manifest.content_digest()

    def test_unreadable_file_skipped_and_reported(self, tmp_path):
        root = make_stub_corpus(tmp_path / "c", {"a": 3, "b": 3})
        bad = root / "a" / "broken.png"
        bad.write_bytes(b"not an image at all")
        m = scan_stub_corpus(root)
        assert m.class_counts["a"] == (3, 0)
        assert str(bad) in m.skipped

    def test_all_unreadable_class_is_hard_error(self, tmp_path):
        root = make_stub_corpus(tmp_path / "c", {"a": 3, "b": 3})
        for p in (root / "b").glob("*.png"):
            p.write_bytes(b"junk")
        with pytest.raises(DataError, match="no decodable"):
            scan_stub_corpus(root)

    def test_missing_class_dir_rejected(self, tmp_path):
        root = make_stub_corpus(tmp_path / "c", {"a": 3, "b": 3})
        registry = build_registry(["a", "b", "zeta"])
        with pytest.raises(DataError, match="zeta"):
            scan_corpus(root, registry, Origin.REAL)

    def test_empty_root_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(DataError, match="no class directories"):
            discover_class_names(empty)
        with pytest.raises(DataError):
            discover_class_names(tmp_path / "missing")

    def test_unknown_extensions_ignored(self, tmp_path):
        root = make_stub_corpus(tmp_path / "c", {"a": 3, "b": 3})
        (root / "a" / "notes.txt").write_text("not an image")
        assert scan_stub_corpus(root).class_counts["a"] == (3, 0)

    def test_duplicate_paths_rejected(self, manifest):
        rec = manifest.records[0]
        with pytest.raises(DataError, match="duplicate"):
            DatasetManifest(registry=manifest.registry, records=(rec, rec))

    def test_foreign_label_rejected(self, manifest):
        alien = ImageRecord(path="/x.png", label=build_registry(["x", "y"])[0], origin=Origin.REAL)
        with pytest.raises(DataError, match="not in class registry"):
            DatasetManifest(registry=manifest.registry, records=(alien,))

    def test_digest_tracks_content(self, tmp_path):
        root = make_stub_corpus(tmp_path / "c", {"a": 3, "b": 3})
        before = scan_stub_corpus(root).content_digest()
        make_stub_corpus(root, {"a": 4})  # adds a_0003.png
        assert scan_stub_corpus(root).content_digest() != before


class TestManifestSerialization:
    def test_round_trip(self, manifest, tmp_path):
        path = tmp_path / "m.jsonl"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert loaded.registry == manifest.registry
        assert loaded.records == manifest.records
        assert loaded.seed == manifest.seed

    def test_baked_splits_survive(self, manifest, tmp_path):
        assignment = stratified_kfold(manifest, 2, seed=3)[1]
        baked = bake_assignment(manifest, assignment)
        path = tmp_path / "m.jsonl"
        save_manifest(baked, path)
        loaded = load_manifest(path)
        assert loaded.records == baked.records
        assert {r.fold for r in loaded.records} == {1}

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_manifest(path)

    def test_unknown_schema_rejected(self, manifest, tmp_path):
        path = tmp_path / "m.jsonl"
        save_manifest(manifest, path)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["schema_version"] = 99
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DataError, match="schema"):
            load_manifest(path)


def class_split_sizes(manifest, assignment):
    """Per class name: {split: count} over real records."""
    out = {}
    for name in registry_names(manifest.registry):
        counts = {s: 0 for s in (Split.TRAIN, Split.VALIDATION, Split.TEST)}
        for rec in manifest.records_for(name, Origin.REAL):
            counts[assignment.split_of(rec)] += 1
        out[name] = counts
    return out


class TestStratifiedKfold:
    def test_validation_errors(self, manifest):
        with pytest.raises(ConfigError, match="k must"):
            stratified_kfold(manifest, 1)
        with pytest.raises(ConfigError, match="triple"):
            stratified_kfold(manifest, 2, fractions=(0.5, 0.5))
        with pytest.raises(ConfigError, match="sum"):
            stratified_kfold(manifest, 2, fractions=(0.5, 0.4, 0.2))
        with pytest.raises(ConfigError, match="positive"):
            stratified_kfold(manifest, 2, fractions=(1.0, 0.0, 0.0))

    def test_tiny_class_rejected(self, tmp_path):
        root = make_stub_corpus(tmp_path / "c", {"a": 5, "b": 2})
        with pytest.raises(DataError, match="at least 3"):
            stratified_kfold(scan_stub_corpus(root), 2)

    def test_every_fold_partitions_every_class(self, manifest):
        for assignment in stratified_kfold(manifest, 5, seed=0):
            sizes = class_split_sizes(manifest, assignment)
            for name, n in SIZES.items():
                counts = sizes[name]
                assert sum(counts.values()) == n
                assert min(counts.values()) >= 1

    def test_sizes_within_one_of_targets(self, manifest):
        fracs = dict(zip((Split.TRAIN, Split.VALIDATION, Split.TEST), (0.6, 0.2, 0.2)))
        for assignment in stratified_kfold(manifest, 5, seed=1):
            for name, n in SIZES.items():
                for split, count in class_split_sizes(manifest, assignment)[name].items():
                    assert abs(count - fracs[split] * n) <= 1.0 + 1e-9, (name, split)

    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_partition_and_tolerance_hold_for_any_seed(self, manifest, seed):
        # the acceptance-level invariant: for every seed and fold, each class
        # is exactly partitioned, each split is within +-1 of its target,
        # and no record lands in two splits
        assignment = stratified_kfold(manifest, 5, seed=seed)[seed % 5]
        seen = {}
        for name, n in SIZES.items():
            counts = class_split_sizes(manifest, assignment)[name]
            assert sum(counts.values()) == n
            assert min(counts.values()) >= 1
            for split, frac in zip((Split.TRAIN, Split.VALIDATION, Split.TEST), (0.6, 0.2, 0.2)):
                assert abs(counts[split] - frac * n) <= 1.0 + 1e-9
        for rec in manifest.records:
            assert rec.path not in seen
            seen[rec.path] = assignment.split_of(rec)

    def test_test_blocks_rotate_disjointly(self, manifest):
        # alpha has 40 records; 5 folds x 8-record test blocks tile them
        assignments = stratified_kfold(manifest, 5, seed=2)
        test_sets = []
        for assignment in assignments:
            test_sets.append(
                {r.path for r in manifest.records_for("alpha") if assignment.split_of(r) is Split.TEST}
            )
        assert all(len(s) == 8 for s in test_sets)
        assert len(set().union(*test_sets)) == 40

    def test_deterministic_per_seed(self, manifest):
        a = stratified_kfold(manifest, 3, seed=7)
        b = stratified_kfold(manifest, 3, seed=7)
        assert [x.splits for x in a] == [y.splits for y in b]
        c = stratified_kfold(manifest, 3, seed=8)
        assert [x.splits for x in a] != [y.splits for y in c]

    def test_digest_distinguishes_folds(self, manifest):
        a0, a1 = stratified_kfold(manifest, 2, seed=0)
        assert a0.digest() != a1.digest()
        assert a0.digest() == stratified_kfold(manifest, 2, seed=0)[0].digest()

    def test_synthetic_stays_out_of_eval_by_default(self, manifest, synth_pool):
        merged = merge_synthetic(manifest, synth_pool, 5)
        assignment = stratified_kfold(merged, 2, seed=0)[0]
        for rec in merged.records:
            if rec.origin is Origin.SYNTHETIC:
                assert rec.path not in assignment.splits
                assert assignment.split_of(rec) is Split.TRAIN

    def test_include_synthetic_reaches_eval(self, manifest, synth_pool):
        merged = merge_synthetic(manifest, synth_pool, 12, allow_eval=True)
        assignment = stratified_kfold(merged, 2, seed=0, include_synthetic=True)[0]
        eval_synth = [
            r
            for r in merged.records
            if r.origin is Origin.SYNTHETIC
            and assignment.split_of(r) in (Split.VALIDATION, Split.TEST)
        ]
        assert eval_synth, "synthetic records should reach evaluation splits"


class TestAssignmentSemantics:
    def test_unassigned_real_record_is_an_error(self):
        assignment = SplitAssignment(fold_id=0, fractions=(0.6, 0.2, 0.2), splits={})
        reg = build_registry(["a", "b"])
        rec = ImageRecord(path="/r.png", label=reg[0], origin=Origin.REAL)
        with pytest.raises(DataError, match="no split assignment"):
            assignment.split_of(rec)

    def test_bake_assignment_labels_records(self, manifest):
        assignment = stratified_kfold(manifest, 4, seed=5)[2]
        baked = bake_assignment(manifest, assignment)
        assert all(r.fold == 2 for r in baked.records)
        for rec, orig in zip(baked.records, manifest.records):
            assert rec.split == assignment.split_of(orig)
        # original untouched
        assert all(r.split is Split.UNASSIGNED for r in manifest.records)

    def test_records_in_matches_split_of(self, manifest):
        assignment = stratified_kfold(manifest, 2, seed=6)[0]
        train = assignment.records_in(manifest, Split.TRAIN)
        assert all(assignment.split_of(r) is Split.TRAIN for r in train)
        total = sum(len(assignment.records_in(manifest, s)) for s in (Split.TRAIN, Split.VALIDATION, Split.TEST))
        assert total == manifest.total


class TestFewShot:
    def get_label(self, manifest, name):
        return next(c for c in manifest.registry if c.name == name)

    def test_seeded_random_is_deterministic(self, manifest):
        label = self.get_label(manifest, "alpha")
        a = select_few_shot(manifest, label, 8, SelectionMode.SEEDED_RANDOM, 42)
        b = select_few_shot(manifest, label, 8, SelectionMode.SEEDED_RANDOM, 42)
        assert [r.path for r in a.records] == [r.path for r in b.records]
        c = select_few_shot(manifest, label, 8, SelectionMode.SEEDED_RANDOM, 43)
        assert [r.path for r in a.records] != [r.path for r in c.records]

    def test_selection_is_unique_and_on_class(self, manifest):
        label = self.get_label(manifest, "beta")
        sel = select_few_shot(manifest, label, 4, SelectionMode.SEEDED_RANDOM, 0)
        paths = [r.path for r in sel.records]
        assert len(set(paths)) == 4
        assert all(r.label == label for r in sel.records)

    def test_respects_train_split(self, manifest):
        label = self.get_label(manifest, "alpha")
        assignment = stratified_kfold(manifest, 2, seed=1)[0]
        sel = select_few_shot(manifest, label, 16, SelectionMode.SEEDED_RANDOM, 0, assignment=assignment)
        for rec in sel.records:
            assert assignment.split_of(rec) is Split.TRAIN

    def test_baked_manifest_restricts_to_train(self, manifest):
        label = self.get_label(manifest, "alpha")
        assignment = stratified_kfold(manifest, 2, seed=1)[0]
        baked = bake_assignment(manifest, assignment)
        sel = select_few_shot(baked, label, 16, SelectionMode.SEEDED_RANDOM, 5)
        train_paths = {r.path for r in assignment.records_in(manifest, Split.TRAIN)}
        assert all(r.path in train_paths for r in sel.records)

    def test_shot_count_gate(self, manifest):
        label = self.get_label(manifest, "alpha")
        with pytest.raises(ConfigError, match="allowed"):
            select_few_shot(manifest, label, 5, SelectionMode.SEEDED_RANDOM, 0)
        sel = select_few_shot(manifest, label, 5, SelectionMode.SEEDED_RANDOM, 0, allowed_counts=None)
        assert sel.shot_count == 5

    def test_insufficient_records(self, manifest):
        label = self.get_label(manifest, "gamma")  # 6 real images
        with pytest.raises(DataError, match="insufficient"):
            select_few_shot(manifest, label, 16, SelectionMode.SEEDED_RANDOM, 0)

    def test_manual_list_round_trip(self, manifest):
        label = self.get_label(manifest, "beta")
        wanted = [r.path for r in manifest.records_for("beta")[:4]]
        sel = select_few_shot(manifest, label, 4, SelectionMode.MANUAL_LIST, wanted)
        assert [r.path for r in sel.records] == wanted
        assert sel.selection_mode is SelectionMode.MANUAL_LIST

    def test_manual_list_errors(self, manifest):
        label = self.get_label(manifest, "beta")
        wanted = [r.path for r in manifest.records_for("beta")[:4]]
        with pytest.raises(ConfigError, match="explicit list"):
            select_few_shot(manifest, label, 4, SelectionMode.MANUAL_LIST, 7)
        with pytest.raises(ConfigError, match="expected 4"):
            select_few_shot(manifest, label, 4, SelectionMode.MANUAL_LIST, wanted[:2])
        with pytest.raises(DataError, match="not an eligible"):
            select_few_shot(manifest, label, 4, SelectionMode.MANUAL_LIST, wanted[:3] + ["/nope.png"])
        with pytest.raises(ConfigError, match="integer seed"):
            select_few_shot(manifest, label, 4, SelectionMode.SEEDED_RANDOM, wanted)

    def test_selection_rejects_synthetic_records(self, manifest):
        label = self.get_label(manifest, "alpha")
        fake = ImageRecord(path="/s.png", label=label, origin=Origin.SYNTHETIC)
        with pytest.raises(DataError, match="real"):
            FewShotSelection(label=label, shot_count=1, records=(fake,), selection_mode=SelectionMode.SEEDED_RANDOM)


class TestMergeSynthetic:
    def test_appends_per_class(self, manifest, synth_pool):
        merged = merge_synthetic(manifest, synth_pool, 10)
        for name, (n_real, n_synth) in merged.class_counts.items():
            assert n_real == SIZES[name]
            assert n_synth == 10
        added = merged.records[manifest.total :]
        assert all(r.origin is Origin.SYNTHETIC and r.split is Split.TRAIN for r in added)

    def test_zero_count_is_identity(self, manifest, synth_pool):
        assert merge_synthetic(manifest, synth_pool, 0) is manifest

    def test_negative_count_rejected(self, manifest, synth_pool):
        with pytest.raises(ConfigError):
            merge_synthetic(manifest, synth_pool, -1)

    def test_existing_records_untouched(self, manifest, synth_pool):
        merged = merge_synthetic(manifest, synth_pool, 7)
        assert merged.records[: manifest.total] == manifest.records

    def test_monotone_in_count(self, manifest, synth_pool):
        small = merge_synthetic(manifest, synth_pool, 3)
        large = merge_synthetic(manifest, synth_pool, 9)
        small_paths = {r.path for r in small.records}
        large_paths = {r.path for r in large.records}
        assert small_paths <= large_paths

    def test_shortfall_reports_deficit(self, manifest, synth_pool):
        with pytest.raises(DataError, match="short by 2"):
            merge_synthetic(manifest, synth_pool, 42)

    def test_missing_class_dir(self, manifest, tmp_path):
        partial = make_stub_corpus(tmp_path / "p", {"alpha": 3, "beta": 3})
        with pytest.raises(DataError, match="gamma"):
            merge_synthetic(manifest, partial, 2)


def checkerboard(h=16, w=16):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[::2, ::2] = 200
    img[1::2, 1::2] = 90
    img[:, :, 2] = np.linspace(0, 255, w, dtype=np.uint8)[None, :]
    return img


class TestAugmentation:
    def test_identity_policy_is_identity(self):
        policy = AugmentationPolicy()
        assert policy.is_identity
        img = checkerboard()
        out = apply_augmentation(img, policy, augmentation_rng(0, 0, 0))
        np.testing.assert_array_equal(out, img)

    def test_standard_policy_is_not_identity(self):
        assert not AugmentationPolicy.standard().is_identity

    def test_deterministic_given_rng_coordinates(self):
        img = checkerboard()
        policy = AugmentationPolicy.standard()
        a = apply_augmentation(img, policy, augmentation_rng(3, 17, 2))
        b = apply_augmentation(img, policy, augmentation_rng(3, 17, 2))
        np.testing.assert_array_equal(a, b)
        c = apply_augmentation(img, policy, augmentation_rng(3, 17, 4))
        assert not np.array_equal(a, c)

    def test_certain_horizontal_flip_is_involution(self):
        policy = AugmentationPolicy(horizontal_flip=1.0)
        img = checkerboard()
        once = apply_augmentation(img, policy, augmentation_rng(0, 0, 0))
        np.testing.assert_array_equal(once, img[:, ::-1, :])
        twice = apply_augmentation(once, policy, augmentation_rng(9, 9, 9))
        np.testing.assert_array_equal(twice, img)

    def test_certain_vertical_flip(self):
        policy = AugmentationPolicy(vertical_flip=1.0)
        img = checkerboard()
        out = apply_augmentation(img, policy, augmentation_rng(0, 0, 0))
        np.testing.assert_array_equal(out, img[::-1, :, :])

    def test_rotation_preserves_dimensions(self):
        policy = AugmentationPolicy(rotation_degrees=15.0)
        out = apply_augmentation(checkerboard(), policy, augmentation_rng(1, 1, 1))
        assert out.shape == (16, 16, 3)
        assert out.dtype == np.uint8

    def test_color_jitter_stays_uint8(self):
        policy = AugmentationPolicy(color_jitter=(0.5, 0.5, 0.5, 0.1))
        out = apply_augmentation(checkerboard(), policy, augmentation_rng(2, 2, 2))
        assert out.dtype == np.uint8
        assert out.shape == (16, 16, 3)

    def test_eval_augmentation_rejected(self):
        with pytest.raises(ConfigError, match="train"):
            AugmentationPolicy(enabled_splits=frozenset({Split.TEST}))

    def test_bad_flip_probability_rejected(self):
        with pytest.raises(ConfigError, match="probabilities"):
            AugmentationPolicy(horizontal_flip=1.5)

    def test_bad_image_shape_rejected(self):
        with pytest.raises(ConfigError):
            apply_augmentation(np.zeros((16, 16)), AugmentationPolicy(), augmentation_rng(0, 0, 0))
        with pytest.raises(ConfigError, match="zero"):
            apply_augmentation(
                np.zeros((0, 4, 3), dtype=np.uint8), AugmentationPolicy(), augmentation_rng(0, 0, 0)
            )


class TestLoadImage:
    def test_resizes_to_square(self, small_corpus):
        path = next((small_corpus / "alpha").glob("*.png"))
        img = load_image(path, resolution=48)
        assert img.shape == (48, 48, 3)
        assert img.dtype == np.uint8

    def test_native_resolution_passthrough(self, small_corpus):
        path = next((small_corpus / "alpha").glob("*.png"))
        raw = np.asarray(Image.open(path).convert("RGB"))
        np.testing.assert_array_equal(load_image(path, resolution=32), raw)

    def test_undecodable_raises(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"nope")
        with pytest.raises(DataError, match="cannot decode"):
            load_image(bad)
        with pytest.raises(DataError):
            load_image(tmp_path / "missing.png")
