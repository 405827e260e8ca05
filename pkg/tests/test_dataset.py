import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evpr.dataset import (
    BatchSpec,
    PlaceSample,
    load_dataset,
    sample_batches,
    split_dataset,
    synthesize_toy_dataset,
    write_manifest,
)
from evpr.errors import DataError
from oracles import split_sizes_oracle


def make_samples(n_labels, per_label, prefix="s"):
    samples = []
    for lab in range(n_labels):
        for i in range(per_label):
            samples.append(
                PlaceSample(
                    sample_id=f"{prefix}{lab:03d}_{i:03d}",
                    location_label=lab,
                    category=("Campus", "Park", "Road")[lab % 3],
                    frames=tuple(f"f{j}.evt" for j in range(5)),
                )
            )
    return samples


def write_toy_manifest(root, rows):
    # Touch the referenced files so existence checks pass.
    for row in rows:
        for j in range(5):
            path = root / row[f"frame_{j}"]
            path.parent.mkdir(parents=True, exist_ok=True)
            path.touch()
        if row["description_file"]:
            desc = root / row["description_file"]
            desc.parent.mkdir(parents=True, exist_ok=True)
            if not desc.exists():
                desc.write_text("a plain test scene\n")
    write_manifest(root, rows)


def manifest_row(sid, label, category="Park", desc=""):
    return {
        "sample_id": sid,
        "location_label": str(label),
        "category": category,
        **{f"frame_{j}": f"events/{sid}_{j}.evt" for j in range(5)},
        "description_file": desc,
    }


class TestLoadDataset:
    def test_loads_toy_manifest(self, tmp_path):
        rows = [manifest_row(f"s{i}", i % 2) for i in range(6)]
        write_toy_manifest(tmp_path, rows)
        samples = load_dataset(tmp_path)
        assert len(samples) == 6
        assert len({s.location_label for s in samples}) == 2
        assert [s.sample_id for s in samples] == [f"s{i}" for i in range(6)]

    def test_four_frames_errors_with_sample_id(self, tmp_path):
        rows = [manifest_row("goodone", 0), manifest_row("shorty", 1)]
        rows[1]["frame_4"] = ""
        write_toy_manifest(tmp_path, rows)
        with pytest.raises(DataError, match="shorty.*4 frames"):
            load_dataset(tmp_path)

    def test_missing_frame_file_reported(self, tmp_path):
        rows = [manifest_row("s0", 0)]
        write_toy_manifest(tmp_path, rows)
        (tmp_path / rows[0]["frame_2"]).unlink()
        with pytest.raises(DataError, match="missing frame file"):
            load_dataset(tmp_path)

    def test_bad_rows_report_line_numbers(self, tmp_path):
        rows = [
            manifest_row("s0", 0),
            manifest_row("s1", "not-an-int"),
            manifest_row("s2", 2, category="Sea"),
        ]
        write_toy_manifest(tmp_path, rows)
        with pytest.raises(DataError) as err:
            load_dataset(tmp_path)
        assert "line 3" in str(err.value)
        assert "line 4" in str(err.value)

    def test_duplicate_sample_id(self, tmp_path):
        rows = [manifest_row("dup", 0), manifest_row("dup", 1)]
        write_toy_manifest(tmp_path, rows)
        with pytest.raises(DataError, match="duplicate"):
            load_dataset(tmp_path)

    def test_descriptions_loaded(self, tmp_path):
        rows = [manifest_row("s0", 0, desc="text/s0.txt")]
        write_toy_manifest(tmp_path, rows)
        samples = load_dataset(tmp_path)
        assert samples[0].description == "a plain test scene"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_dataset(tmp_path / "nowhere")

    def test_write_then_load_round_trip(self, tmp_path):
        written = synthesize_toy_dataset(
            tmp_path / "d", n_labels=20, samples_per_label=5, resolution=(32, 32), seed=1
        )
        assert len(written) == 100
        loaded = load_dataset(tmp_path / "d")
        assert loaded == written

    def test_mixed_frame_formats_per_row(self, tmp_path):
        # Rows may point at pre-rendered PNG frames and event files side by
        # side; both must load to the same accumulation.
        import csv as csv_module

        import numpy as np

        from evpr.events import accumulate_frame, load_events, load_frame, save_frame_png

        root = tmp_path / "d"
        synthesize_toy_dataset(root, n_labels=2, samples_per_label=2, resolution=(32, 32), seed=3)
        manifest = root / "manifest.csv"
        with manifest.open(newline="") as fh:
            rows = list(csv_module.DictReader(fh))
        victim = rows[0]
        for j in (0, 1):
            evt_rel = victim[f"frame_{j}"]
            frame = accumulate_frame(load_events(root / evt_rel))
            png_rel = evt_rel.replace(".evt", ".png")
            save_frame_png(frame, root / png_rel)
            victim[f"frame_{j}"] = png_rel
        write_manifest(root, rows)
        loaded = load_dataset(root)
        sample = loaded[0]
        assert sample.frames[0].suffix == ".png"
        png_frame = load_frame(sample.frames[0])
        evt_frame = load_frame(sample.frames[2])
        assert png_frame.values.shape == evt_frame.values.shape
        assert np.abs(png_frame.values).sum() > 0


class TestSplitDataset:
    def test_paper_scale_sizes(self):
        samples = make_samples(13_109, 1)
        split = split_dataset(samples, seed=0)
        assert (len(split.train), len(split.val), len(split.test)) == (9_176, 1_311, 2_622)
        assert split_sizes_oracle(13_109, (0.7, 0.1, 0.2)) == (9_176, 1_311, 2_622)

    def test_ten_samples(self):
        split = split_dataset(make_samples(10, 1), seed=3)
        assert (len(split.train), len(split.val), len(split.test)) == (7, 1, 2)

    def test_deterministic(self):
        samples = make_samples(5, 7)
        assert split_dataset(samples, seed=42) == split_dataset(samples, seed=42)
        assert split_dataset(samples, seed=42) != split_dataset(samples, seed=43)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            split_dataset(make_samples(2, 1))

    def test_ratios_must_sum_to_one(self):
        with pytest.raises(ValueError):
            split_dataset(make_samples(4, 2), ratios=(0.5, 0.2, 0.2))

    @given(st.integers(3, 400), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_disjoint_exhaustive_within_one(self, n, seed):
        samples = make_samples(n, 1)
        split = split_dataset(samples, seed=seed)
        ids = {s.sample_id for s in samples}
        assert split.train | split.val | split.test == ids
        assert not (split.train & split.val or split.train & split.test or split.val & split.test)
        for part, ratio in ((split.train, 0.7), (split.val, 0.1), (split.test, 0.2)):
            assert abs(len(part) - n * ratio) <= 1

    def test_scene_split_keeps_labels_together(self):
        samples = make_samples(10, 8)
        split = split_dataset(samples, seed=5, by="scene")
        by_id = {s.sample_id: s.location_label for s in samples}
        for part in (split.train, split.val, split.test):
            labels_here = {by_id[sid] for sid in part}
            for other in (split.train, split.val, split.test):
                if other is part:
                    continue
                assert not labels_here & {by_id[sid] for sid in other}


class TestBatchSampler:
    def test_single_batch_covers_everything(self):
        samples = make_samples(4, 6)
        labels = {s.sample_id: s.location_label for s in samples}
        batches = list(sample_batches(list(labels), labels, BatchSpec(4, 6), seed=0))
        assert len(batches) == 1
        assert sorted(batches[0]) == sorted(labels)

    def test_batch_shape(self):
        samples = make_samples(3, 4)
        labels = {s.sample_id: s.location_label for s in samples}
        for seed in range(10):
            for batch in sample_batches(list(labels), labels, BatchSpec(2, 2), seed=seed):
                assert len(batch) == 4
                assert len({labels[sid] for sid in batch}) == 2

    def test_every_anchor_has_positive_and_negative(self):
        samples = make_samples(5, 3)
        labels = {s.sample_id: s.location_label for s in samples}
        spec = BatchSpec(2, 3)
        for seed in range(25):
            for batch in sample_batches(list(labels), labels, spec, seed=seed):
                for sid in batch:
                    same = [o for o in batch if o != sid and labels[o] == labels[sid]]
                    other = [o for o in batch if labels[o] != labels[sid]]
                    assert same and other

    def test_replacement_when_label_short(self):
        samples = make_samples(2, 2)
        labels = {s.sample_id: s.location_label for s in samples}
        batches = list(sample_batches(list(labels), labels, BatchSpec(2, 5), seed=1))
        assert batches and all(len(b) == 10 for b in batches)

    def test_too_few_labels(self):
        samples = make_samples(1, 10)
        labels = {s.sample_id: s.location_label for s in samples}
        with pytest.raises(ValueError, match="2 labels"):
            list(sample_batches(list(labels), labels, BatchSpec(2, 2), seed=0))

    def test_fewer_labels_than_requested(self):
        samples = make_samples(3, 4)
        labels = {s.sample_id: s.location_label for s in samples}
        with pytest.raises(ValueError):
            list(sample_batches(list(labels), labels, BatchSpec(4, 2), seed=0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BatchSpec(1, 6)
        with pytest.raises(ValueError):
            BatchSpec(4, 1)
        assert BatchSpec(4, 6).batch_size == 24


class TestSynthesize:
    def test_counts(self, tmp_path):
        samples = synthesize_toy_dataset(
            tmp_path / "d", n_labels=4, samples_per_label=5, resolution=(64, 64), seed=0
        )
        assert len(samples) == 20
        frame_files = list((tmp_path / "d" / "events").glob("*.evt"))
        assert len(frame_files) == 100

    def test_same_seed_bit_identical(self, tmp_path):
        synthesize_toy_dataset(tmp_path / "a", n_labels=2, samples_per_label=2, seed=7)
        synthesize_toy_dataset(tmp_path / "b", n_labels=2, samples_per_label=2, seed=7)
        files_a = sorted((tmp_path / "a").rglob("*.*"))
        files_b = sorted((tmp_path / "b").rglob("*.*"))
        assert [f.name for f in files_a] == [f.name for f in files_b]
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes()

    def test_refuses_nonempty_dir(self, tmp_path):
        target = tmp_path / "d"
        target.mkdir()
        (target / "existing.txt").write_text("x")
        with pytest.raises(DataError, match="non-empty"):
            synthesize_toy_dataset(target, n_labels=2, samples_per_label=2)
        synthesize_toy_dataset(target, n_labels=2, samples_per_label=2, force=True)

    def test_requires_two_labels(self, tmp_path):
        with pytest.raises(ValueError):
            synthesize_toy_dataset(tmp_path / "d", n_labels=1, samples_per_label=2)


def test_place_sample_validation():
    with pytest.raises(DataError, match="4 frames"):
        PlaceSample("x", 0, "Park", frames=tuple(f"f{j}" for j in range(4)))
    with pytest.raises(DataError, match="category"):
        PlaceSample("x", 0, "Desert", frames=tuple(f"f{j}" for j in range(5)))
