import hashlib
import json

import pytest

from ctcbench.experiments import (
    ARMS,
    AugmentSettings,
    ExperimentConfig,
    ExperimentError,
    get_arm,
    load_eval_samples,
    prepare_arm_data,
    regenerate_reports,
    run_ablation,
    run_arm,
    run_backbone_comparison,
)
from ctcbench.manifest import CellRecord, Manifest, load_manifest, save_manifest
from ctcbench.model import BackboneFamily, BackboneSpec, UnknownBackboneError
from ctcbench.pngio import read_gray_png
from ctcbench.splitting import SplitMode, SplitPolicy, make_split
from ctcbench.trainer import TrainConfig

MICRO = BackboneSpec(BackboneFamily.MINI_RESNET, (1, 1), 4, 32, 2, "micro32")

ARM_MULTIPLIERS = {
    "AUG1": 2,
    "AUG2": 3,
    "BF_WO_DAPI": 4,
    "BF_W_DAPI_NO_AUG": 2,
    "BF_W_DAPI": 5,
    "DAPI_WO_BF": 4,
    "DAPI_W_BF": 5,
}


class RecordingLoader:
    def __init__(self):
        self.paths = []

    def __call__(self, path):
        self.paths.append(str(path))
        return read_gray_png(path)


@pytest.fixture()
def tiny_split(tiny_dataset):
    policy = SplitPolicy(SplitMode.EXACT_COUNTS, seed=4, val_ctc=1, val_leuko=1, test_leuko=2)
    return make_split(tiny_dataset, policy)


def micro_config(tiny_dataset, tmp_path, arm="BF_W_DAPI", seeds=(0,), epochs=1, name="exp"):
    return ExperimentConfig(
        manifest_path=tiny_dataset.image_root / "manifest.csv",
        split_policy=SplitPolicy(SplitMode.EXACT_COUNTS, seed=4, val_ctc=1, val_leuko=1, test_leuko=2),
        arm_name=arm,
        backbone=MICRO,
        train=TrainConfig.desk_preset(epochs=epochs, batch_size=8, seeds=seeds),
        output_dir=tmp_path,
        experiment_name=name,
        augment=AugmentSettings(seed=9),
    )


class TestArmTable:
    def test_seven_arms_defined(self):
        assert set(ARMS) == set(ARM_MULTIPLIERS)

    def test_arm_definitions(self):
        assert ARMS["AUG1"].primary_channel == "BF" and ARMS["AUG1"].n_aug_ops == 1
        assert not ARMS["AUG1"].inject_other_channel
        assert ARMS["AUG2"].n_aug_ops == 2
        assert ARMS["BF_WO_DAPI"].n_aug_ops == 3 and not ARMS["BF_WO_DAPI"].inject_other_channel
        assert ARMS["BF_W_DAPI_NO_AUG"].n_aug_ops == 0 and ARMS["BF_W_DAPI_NO_AUG"].inject_other_channel
        assert ARMS["BF_W_DAPI"].n_aug_ops == 3 and ARMS["BF_W_DAPI"].inject_other_channel
        assert ARMS["DAPI_WO_BF"].primary_channel == "DAPI"
        assert ARMS["DAPI_W_BF"].primary_channel == "DAPI" and ARMS["DAPI_W_BF"].inject_other_channel

    def test_multiplier_table(self):
        for name, expected in ARM_MULTIPLIERS.items():
            assert ARMS[name].multiplier == expected, name

    def test_unknown_arm(self):
        with pytest.raises(ExperimentError, match="unknown arm"):
            get_arm("BF_MAYBE_DAPI")


class TestPreparation:
    @pytest.mark.parametrize("arm_name", sorted(ARMS))
    def test_expansion_matches_multiplier(self, tiny_dataset, tiny_split, arm_name):
        data = prepare_arm_data(tiny_dataset, tiny_split, ARMS[arm_name], AugmentSettings(), 32)
        assert len(data.samples.train) == len(tiny_split.train) * ARM_MULTIPLIERS[arm_name]
        assert len(data.samples.val) == len(tiny_split.val)
        assert len(data.samples.test) == len(tiny_split.test)

    def test_plan_op_composition(self):
        settings = AugmentSettings()
        from ctcbench.experiments import build_plan

        assert [op.kind.value for op in build_plan(ARMS["AUG1"], settings).ops] == ["GEOMETRIC"]
        assert [op.kind.value for op in build_plan(ARMS["AUG2"], settings).ops] == ["GEOMETRIC", "BRIGHTNESS"]
        assert [op.kind.value for op in build_plan(ARMS["BF_W_DAPI"], settings).ops] == [
            "GEOMETRIC", "BRIGHTNESS", "COLOR"]
        assert build_plan(ARMS["BF_W_DAPI_NO_AUG"], settings).ops == ()

    def test_channel_hygiene_bf_arm(self, tiny_dataset, tiny_split):
        by_id = tiny_dataset.by_id()
        loader = RecordingLoader()
        val_records = [by_id[i] for i in tiny_split.val]
        test_records = [by_id[i] for i in tiny_split.test]
        _, val_paths = load_eval_samples(val_records, "BF", 32, loader)
        _, test_paths = load_eval_samples(test_records, "BF", 32, loader)
        expected = {str(r.bf_path) for r in val_records + test_records}
        assert set(loader.paths) == expected
        assert set(val_paths + test_paths) == expected
        assert not any("DAPI" in p for p in loader.paths)

    def test_channel_hygiene_dapi_arm(self, tiny_dataset, tiny_split):
        by_id = tiny_dataset.by_id()
        loader = RecordingLoader()
        records = [by_id[i] for i in tiny_split.test]
        _, paths = load_eval_samples(records, "DAPI", 32, loader)
        assert set(loader.paths) == {str(r.dapi_path) for r in records}
        assert all(p.endswith("_DAPI.png") for p in loader.paths)

    def test_eval_paths_recorded_in_arm_data(self, tiny_dataset, tiny_split):
        data = prepare_arm_data(tiny_dataset, tiny_split, ARMS["BF_W_DAPI"], AugmentSettings(), 32)
        by_id = tiny_dataset.by_id()
        expected = {str(by_id[i].bf_path) for i in tiny_split.val + tiny_split.test}
        assert set(data.eval_image_paths) == expected

    def test_bf_arm_runs_without_dapi_images(self, tiny_dataset, tmp_path):
        # Strip the DAPI column; BF-only arms must not care.
        records = tuple(
            CellRecord(r.cell_id, r.label, r.provenance, r.bf_path, None, r.source_tag)
            for r in tiny_dataset.records
        )
        stripped_dir = tmp_path / "nodapi"
        stripped_dir.mkdir()
        import shutil

        shutil.copytree(tiny_dataset.image_root / "images", stripped_dir / "images")
        rebased = tuple(
            CellRecord(r.cell_id, r.label, r.provenance, stripped_dir / "images" / r.bf_path.name,
                       None, r.source_tag)
            for r in records
        )
        save_manifest(Manifest(records=rebased, image_root=stripped_dir), stripped_dir / "manifest.csv")
        manifest = load_manifest(stripped_dir / "manifest.csv")
        split = make_split(manifest, SplitPolicy(SplitMode.EXACT_COUNTS, seed=4,
                                                 val_ctc=1, val_leuko=1, test_leuko=2))
        data = prepare_arm_data(manifest, split, ARMS["BF_WO_DAPI"], AugmentSettings(), 32)
        assert len(data.samples.train) == len(split.train) * 4
        with pytest.raises(ExperimentError, match="empty"):
            prepare_arm_data(manifest, split, ARMS["BF_W_DAPI"], AugmentSettings(), 32)

    def test_mirrored_arms_have_equal_counts(self, tiny_dataset, tiny_split):
        a = prepare_arm_data(tiny_dataset, tiny_split, ARMS["BF_W_DAPI"], AugmentSettings(), 32)
        b = prepare_arm_data(tiny_dataset, tiny_split, ARMS["DAPI_W_BF"], AugmentSettings(), 32)
        assert len(a.samples.train) == len(b.samples.train)
        assert len(a.samples.test) == len(b.samples.test)
        # Channel roles are mirrored: eval paths disjoint between the two arms.
        assert not set(a.eval_image_paths) & set(b.eval_image_paths)


def tree_digest(root, patterns=("*.json", "*.csv", "*.md")):
    h = hashlib.sha256()
    for pattern in patterns:
        for path in sorted(root.rglob(pattern)):
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


class TestRunArm:
    def test_artifacts_written(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        records, aggregate = run_arm(config)
        arm_dir = config.experiment_dir / "BF_W_DAPI"
        assert (arm_dir / "run_manifest.json").is_file()
        assert (arm_dir / "aggregate.json").is_file()
        assert (arm_dir / "f1_by_seed.csv").is_file()
        assert (arm_dir / "seed_0" / "record.json").is_file()
        assert (arm_dir / "seed_0" / "checkpoint.wa").is_file()
        assert aggregate.complete
        manifest_payload = json.loads((arm_dir / "run_manifest.json").read_text())
        assert manifest_payload["multiplier"] == 5
        assert [op["kind"] for op in manifest_payload["plan"]["ops"]] == [
            "GEOMETRIC", "BRIGHTNESS", "COLOR"]
        assert manifest_payload["eval_image_paths"]

    def test_rerun_reproduces_identical_files(self, tiny_dataset, tmp_path):
        config_a = micro_config(tiny_dataset, tmp_path / "a")
        config_b = micro_config(tiny_dataset, tmp_path / "b")
        run_arm(config_a)
        run_arm(config_b)
        assert tree_digest(config_a.experiment_dir) == tree_digest(config_b.experiment_dir)


class TestAblation:
    def test_two_arm_ablation_reports(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        report = run_ablation(config, ["BF_WO_DAPI", "BF_W_DAPI"])
        exp_dir = config.experiment_dir
        md = (exp_dir / "ablation.md").read_text()
        csv_text = (exp_dir / "ablation.csv").read_text()
        vectors = (exp_dir / "f1_vectors.csv").read_text()
        assert md.count("|") > 0 and "BF_W_DAPI" in md
        assert csv_text.splitlines()[0].startswith("arm,accuracy_mean")
        assert vectors.splitlines()[0] == "arm,seed,f1"
        assert len(vectors.splitlines()) == 3  # header + 1 seed x 2 arms
        assert len(report.rows) == 2

    def test_single_arm_one_row(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        report = run_ablation(config, ["AUG1"])
        assert len(report.rows) == 1
        table = (config.experiment_dir / "ablation.md").read_text()
        assert table.strip().splitlines()[2].startswith("| AUG1 |")

    def test_empty_arm_list_rejected(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        with pytest.raises(ExperimentError):
            run_ablation(config, [])

    def test_regenerate_reports_round_trip(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        run_ablation(config, ["AUG1", "BF_W_DAPI"])
        exp_dir = config.experiment_dir
        before = {p.name: p.read_text() for p in exp_dir.glob("ablation.*")}
        (exp_dir / "ablation.md").unlink()
        (exp_dir / "ablation.csv").unlink()
        written = regenerate_reports(config.output_dir)
        assert (exp_dir / "ablation.md").read_text() == before["ablation.md"]
        assert (exp_dir / "ablation.csv").read_text() == before["ablation.csv"]
        assert any(p.name == "ablation.md" for p in written)


class TestBackboneComparison:
    def test_single_backbone_row(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        report = run_backbone_comparison(config, ["mini"])
        assert len(report.rows) == 1
        md = (config.experiment_dir / "comparison.md").read_text()
        assert "| mini |" in md

    def test_unknown_backbone_rejected(self, tiny_dataset, tmp_path):
        config = micro_config(tiny_dataset, tmp_path)
        with pytest.raises(UnknownBackboneError):
            run_backbone_comparison(config, ["mini", "not-a-net"])

    def test_two_widths_both_learn_high_signal(self, tmp_path):
        # Comparison over the 8- and 16-wide mini presets on easy data: two
        # rows, both with test F1 >= 0.9.
        from ctcbench.synthgen import SynthSpec, generate_dataset

        spec = SynthSpec(n_spiked_ctc=24, n_patient_ctc=8, n_leuko=24, image_size=64,
                         bf_signal_strength=1.0, dapi_informativeness=1.0,
                         noise_sigma=0.02, seed=77)
        dataset = generate_dataset(spec, tmp_path / "hi")
        config = ExperimentConfig(
            manifest_path=dataset.image_root / "manifest.csv",
            split_policy=SplitPolicy(SplitMode.EXACT_COUNTS, seed=3, val_ctc=3,
                                     val_leuko=3, test_leuko=4),
            arm_name="BF_W_DAPI",
            backbone=MICRO,  # replaced per row by the named presets
            train=TrainConfig.desk_preset(epochs=6, batch_size=16, seeds=(0, 1)),
            output_dir=tmp_path,
            experiment_name="widths",
        )
        report = run_backbone_comparison(config, ["mini", "mini-wide"])
        assert [name for name, _ in report.rows] == ["mini", "mini-wide"]
        for name, aggregate in report.rows:
            mean_f1, _ = aggregate.mean_std("f1")
            assert mean_f1 >= 0.9, f"{name}: mean F1 {mean_f1:.3f}"
