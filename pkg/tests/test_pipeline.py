"""Pipeline orchestration and artifact round-trips."""

import pytest

from dtanet.model import Model
from dtanet.pipeline import (
    DirectoryLock,
    PipelineError,
    SmokeError,
    build_assignment,
    end_to_end_smoke,
    load_pair_dataset,
    read_graph_features,
    read_report,
    run_cv,
    run_evaluate,
    run_predict,
    run_training,
    run_tune,
    write_graph_features,
    write_report,
)
from dtanet.runconfig import ConfigError, parse_run_config
from dtanet.smiles import parse_smiles
from dtanet.synthetic import write_fixture

TINY = {
    "model.hidden_layers": "16",
    "model.fp_bits": "512",
    "train.max_epochs": "2",
    "train.batch_size": "16",
    "split.repetitions": "1",
    "split.k": "2",
}


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("fixture")
    write_fixture(directory, n_compounds=16, n_proteins=8, seed=0)
    return directory


@pytest.fixture()
def tiny_config():
    return parse_run_config(None, overrides=dict(TINY))


class TestFixtureGeneration:
    def test_fixture_parses_with_own_parser(self, fixture_dir):
        lines = (fixture_dir / "interactions.csv").read_text().splitlines()
        assert lines[0] == "smiles,protein_id,task_id,value"
        for line in lines[1:]:
            parse_smiles(line.split(",")[0])

    def test_every_entity_has_two_observations(self, fixture_dir, tiny_config):
        dataset = load_pair_dataset(tiny_config, fixture_dir)
        drugs = [dataset.compounds[i] for i in dataset.pairs[:, 0]]
        targets = [dataset.protein_ids[i] for i in dataset.pairs[:, 1]]
        assert min(drugs.count(d) for d in set(drugs)) >= 2
        assert min(targets.count(t) for t in set(targets)) >= 2

    def test_deterministic(self, tmp_path):
        write_fixture(tmp_path / "a", seed=3)
        write_fixture(tmp_path / "b", seed=3)
        assert (tmp_path / "a" / "interactions.csv").read_bytes() == \
               (tmp_path / "b" / "interactions.csv").read_bytes()


class TestRunConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_run_config(None, overrides={"model.frobnicate": "1"})

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[nonsense]\nx=1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown config section"):
            parse_run_config(path)

    def test_snapshot_is_canonical(self, tiny_config):
        snap = tiny_config.snapshot()
        assert "[model]" in snap and "fp_bits=512" in snap
        again = parse_run_config(None, overrides=dict(TINY)).snapshot()
        assert snap == again

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("[split]\nk=7\n", encoding="utf-8")
        cfg = parse_run_config(path)
        assert cfg.split_params()["k"] == 7


class TestTrainingCommand:
    def test_checkpoint_and_history(self, fixture_dir, tiny_config, tmp_path):
        dataset = load_pair_dataset(tiny_config, fixture_dir)
        ckpt = run_training(tiny_config, dataset, tmp_path / "m.ckpt", seed=1)
        assert ckpt.exists()
        history = (tmp_path / "m.ckpt.history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,val_rmse,val_ci,composite"
        assert len(history) >= 2
        model, extras = Model.load(ckpt)
        assert extras["run_config"] == tiny_config.snapshot()
        assert extras["optimizer_arrays"]  # Adam state rides along


class TestCvCommand:
    def test_report_structure_and_round_trip(self, fixture_dir, tiny_config,
                                             tmp_path):
        dataset = load_pair_dataset(tiny_config, fixture_dir)
        report_path = run_cv(tiny_config, dataset, tmp_path / "cv",
                             scheme="warm")
        comments, rows = read_report(report_path)
        fold_rows = [r for r in rows if r[2] not in ("mean", "std")
                     and r[0] != "scheme"]
        assert all(r[9] == "pass" for r in fold_rows)  # leakage audit column
        aggregate_rows = [r for r in fold_rows if r[4] == "aggregate"]
        assert len(aggregate_rows) == 2  # k=2 folds, 1 repetition
        assert any(r[2] == "mean" for r in rows)
        assert any(r[2] == "std" for r in rows)
        assert any("config.fp_bits=512" in c for c in comments)
        # byte-identical rewrite through the reader is covered for folds;
        # reports must at least re-parse to the same rows
        text = report_path.read_text(encoding="utf-8")
        report_path.write_text(text, encoding="utf-8")
        assert read_report(report_path) == (comments, rows)

    def test_two_repetitions_generically_differ(self, fixture_dir, tmp_path):
        cfg = parse_run_config(None, overrides={**TINY,
                                                "split.repetitions": "2"})
        dataset = load_pair_dataset(cfg, fixture_dir)
        report_path = run_cv(cfg, dataset, tmp_path / "cv2", scheme="random")
        _, rows = read_report(report_path)
        std_rows = [r for r in rows if r[2] == "std" and r[4] == "rmse"]
        assert float(std_rows[0][6]) > 0.0

    def test_cold_scheme_audit_pass(self, fixture_dir, tiny_config, tmp_path):
        dataset = load_pair_dataset(tiny_config, fixture_dir)
        report_path = run_cv(tiny_config, dataset, tmp_path / "cv3",
                             scheme="cold-drug")
        _, rows = read_report(report_path)
        fold_rows = [r for r in rows if r[2] not in ("mean", "std")
                     and r[0] != "scheme"]
        assert fold_rows and all(r[9] == "pass" for r in fold_rows)

    def test_replays_fold_csv_from_split(self, fixture_dir, tiny_config,
                                         tmp_path):
        from dtanet.splits import write_folds

        dataset = load_pair_dataset(tiny_config, fixture_dir)
        assignment = build_assignment(dataset, "cold-target", k=2, seed=4)
        folds_csv = tmp_path / "folds.csv"
        write_folds(folds_csv, assignment)
        report_path = run_cv(tiny_config, dataset, tmp_path / "cv4",
                             folds_path=folds_csv)
        _, rows = read_report(report_path)
        data_rows = [r for r in rows if r[0] == "cold-target"]
        assert data_rows  # replayed scheme drives the report
        reps = {r[2] for r in data_rows if r[2] not in ("mean", "std")}
        assert reps == {"0"}

    def test_report_write_read_write_byte_identical(self, fixture_dir,
                                                    tiny_config, tmp_path):
        from dtanet.pipeline import rewrite_report

        dataset = load_pair_dataset(tiny_config, fixture_dir)
        report_path = run_cv(tiny_config, dataset, tmp_path / "cv5",
                             scheme="random")
        comments, rows = read_report(report_path)
        copy = tmp_path / "copy.csv"
        rewrite_report(copy, comments, rows)
        assert copy.read_bytes() == report_path.read_bytes()

    def test_compound_only_variant_through_cv(self, fixture_dir, tmp_path):
        cfg = parse_run_config(None, overrides={
            **TINY, "model.variant": "compound-only-ecfp"})
        dataset = load_pair_dataset(cfg, fixture_dir)
        report_path = run_cv(cfg, dataset, tmp_path / "cv6",
                             scheme="cold-drug")
        _, rows = read_report(report_path)
        assert any(r[4] == "aggregate" for r in rows if r[0] == "cold-drug")

    def test_compound_only_rejects_cold_target(self, fixture_dir, tmp_path):
        cfg = parse_run_config(None, overrides={
            **TINY, "model.variant": "compound-only-ecfp"})
        dataset = load_pair_dataset(cfg, fixture_dir)
        with pytest.raises(PipelineError, match="cold-target"):
            run_cv(cfg, dataset, tmp_path / "cv7", scheme="cold-target")

    def test_lock_excludes_second_owner(self, tmp_path):
        with DirectoryLock(tmp_path / "run"):
            with pytest.raises(PipelineError, match="locked"):
                with DirectoryLock(tmp_path / "run"):
                    pass
        # released on exit
        with DirectoryLock(tmp_path / "run"):
            pass


class TestPredictEvaluate:
    def test_predict_with_ad_column(self, fixture_dir, tiny_config, tmp_path):
        dataset = load_pair_dataset(tiny_config, fixture_dir)
        ckpt = run_training(tiny_config, dataset, tmp_path / "m.ckpt", seed=0)
        pairs_csv = tmp_path / "pairs.csv"
        lines = ["smiles,protein_id,task_id,value"]
        for row in range(min(10, dataset.n_pairs)):
            ci, pi = dataset.pairs[row]
            raw = 10.0 ** (4.0 - dataset.y[row, 0])
            lines.append(f"{dataset.compounds[ci]},"
                         f"{dataset.protein_ids[pi]},0,{raw:.6g}")
        pairs_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out = run_predict(ckpt, pairs_csv, fixture_dir / "proteins.tsv",
                          tmp_path / "preds.csv", ad_from=pairs_csv)
        header, *rows = out.read_text().splitlines()
        assert header == "smiles,protein_id,task_id,value,prediction,in_ad"
        assert all(r.split(",")[-1] in ("0", "1") for r in rows)
        report = run_evaluate(out, tmp_path / "eval.csv")
        assert report.rmse is not None

    def test_graphconv_variant_predicts(self, fixture_dir, tmp_path):
        cfg = parse_run_config(None, overrides={
            **TINY, "model.variant": "padme-graphconv",
            "model.conv_widths": "8", "model.conv_dense": "16"})
        dataset = load_pair_dataset(cfg, fixture_dir)
        ckpt = run_training(cfg, dataset, tmp_path / "gc.ckpt", seed=0)
        pairs_csv = tmp_path / "pairs.csv"
        ci, pi = dataset.pairs[0]
        pairs_csv.write_text(
            "smiles,protein_id\n"
            f"{dataset.compounds[ci]},{dataset.protein_ids[pi]}\n",
            encoding="utf-8")
        out = run_predict(ckpt, pairs_csv, fixture_dir / "proteins.tsv",
                          tmp_path / "preds.csv")
        rows = out.read_text().splitlines()
        assert rows[0] == "smiles,protein_id,task_id,prediction"
        float(rows[1].rsplit(",", 1)[1])  # prediction parses as a number

    def test_unknown_protein_reported(self, fixture_dir, tiny_config,
                                      tmp_path):
        dataset = load_pair_dataset(tiny_config, fixture_dir)
        ckpt = run_training(tiny_config, dataset, tmp_path / "m.ckpt", seed=0)
        pairs_csv = tmp_path / "pairs.csv"
        pairs_csv.write_text("smiles,protein_id\nCCO,NOPE\n", encoding="utf-8")
        with pytest.raises(PipelineError, match="NOPE"):
            run_predict(ckpt, pairs_csv, fixture_dir / "proteins.tsv",
                        tmp_path / "preds.csv")


class TestTuneCommand:
    def test_trial_log_and_best_config(self, tmp_path):
        from dtanet.synthetic import memory_dataset

        cfg = parse_run_config(None, overrides={
            **TINY, "train.max_epochs": "1", "tune.budget": "3",
            "tune.n_init": "2", "tune.strategy": "random"})
        dataset = memory_dataset(n_compounds=10, n_proteins=5, n_pairs=30,
                                 seed=0)
        best = run_tune(cfg, dataset, tmp_path / "tune", budget=3,
                        strategy="random")
        trials = (tmp_path / "tune" / "trials.csv").read_text().splitlines()
        assert trials[0].startswith("trial,status,value,")
        assert len(trials) == 4
        text = best.read_text(encoding="utf-8")
        assert "[model]" in text and "[train]" in text
        follow_up = parse_run_config(best)
        assert follow_up.train_config().learning_rate > 0


class TestGraphFeatureFile:
    def test_round_trip(self, tmp_path):
        smiles = ["CCO", "c1ccccc1", "C"]
        path = tmp_path / "graphs.bin"
        write_graph_features(smiles, path)
        loaded = read_graph_features(path)
        assert len(loaded) == 3
        rows, adjacency = loaded[0]
        assert rows.shape == (3, 36)
        assert adjacency == [[1], [0, 2], [1]]


class TestSmoke:
    def test_all_stages_pass(self, fixture_dir, tmp_path):
        stages = end_to_end_smoke(fixture_dir, tmp_path / "smoke", seed=0)
        assert stages == ["ingest", "featurize", "split", "train",
                          "predict", "evaluate"]

    def test_corrupted_csv_fails_at_ingest(self, tmp_path):
        bad = tmp_path / "bad"
        write_fixture(bad, seed=1)
        path = bad / "interactions.csv"
        path.write_text(path.read_text().replace(
            "smiles,protein_id,task_id,value", "smiles,who,knows,what"),
            encoding="utf-8")
        with pytest.raises(SmokeError, match="ingest"):
            end_to_end_smoke(bad, tmp_path / "w", seed=0)

    def test_missing_sequence_fails_at_ingest_with_id(self, tmp_path):
        bad = tmp_path / "bad2"
        write_fixture(bad, seed=2)
        proteins_path = bad / "proteins.tsv"
        lines = proteins_path.read_text().splitlines()
        proteins_path.write_text("\n".join(lines[1:]) + "\n", encoding="utf-8")
        dropped_id = lines[0].split("\t")[0]
        with pytest.raises(SmokeError, match="ingest") as err:
            end_to_end_smoke(bad, tmp_path / "w2", seed=0)
        assert dropped_id in str(err.value)
