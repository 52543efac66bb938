import json
import math

import numpy as np
import pytest

from isomax import harness
from isomax.cli import main
from isomax.config import (
    ExperimentConfig,
    default_config,
    format_config,
    hard_config,
    load_config,
    parse_config,
)
from isomax.datasets import OodPair
from isomax.errors import ContractError, ParseError
from isomax.scoring import ScoredExample, read_score_csv

TINY = dict(
    per_class=30,
    ood_count=60,
    hidden=(8, 8),
    embedding_dim=4,
    epochs=4,
    batch_size=16,
    lr_milestones=(2, 3),
    seeds=(0, 1),
)


def tiny(tmp_path, name="run", **changes):
    return ExperimentConfig(**{**TINY, "output_dir": str(tmp_path / name), **changes})


class TestConfig:
    def test_parse_basic(self):
        cfg = parse_config("# comment\nhead = softmax\nhidden = 32, 16\nseeds = [3]\n\nsigma = 0.25\n")
        assert cfg.head == "softmax"
        assert cfg.hidden == (32, 16)
        assert cfg.seeds == (3,)
        assert cfg.sigma == 0.25

    def test_round_trip(self):
        for cfg in (default_config(), hard_config(), ExperimentConfig(min_separation=None)):
            assert parse_config(format_config(cfg)) == cfg

    def test_shipped_files_match_presets(self):
        assert load_config("configs/default.cfg") == default_config()
        assert load_config("configs/hard.cfg") == hard_config()

    def test_errors_report_location(self):
        with pytest.raises(ParseError, match=r"f.cfg:2: unknown key 'bogus'"):
            parse_config("head = isomax\nbogus = 1\n", "f.cfg")
        with pytest.raises(ParseError, match=r":1: bad value for epochs"):
            parse_config("epochs = many\n")
        with pytest.raises(ParseError, match=r":1: expected"):
            parse_config("just words\n")
        with pytest.raises(ParseError, match="head must be"):
            parse_config("head = linear\n")

    def test_overrides_win(self):
        assert parse_config("epochs = 7\n", epochs=3).epochs == 3

    def test_hash_tracks_content(self):
        a = ExperimentConfig()
        assert a.config_hash() == ExperimentConfig().config_hash()
        assert a.config_hash() != a.replace(sigma=0.6).config_hash()

    def test_validation(self):
        with pytest.raises(ContractError):
            ExperimentConfig(entropic_scale=0)
        with pytest.raises(ContractError):
            ExperimentConfig(dataset="csv")
        with pytest.raises(ContractError):
            ExperimentConfig(seeds=())


class TestRunExperiment:
    def test_report_schema(self, tmp_path):
        cfg = tiny(tmp_path)
        report = harness.run_experiment(cfg)
        out = tmp_path / "run"
        assert json.loads((out / "report.json").read_text()) == report
        assert report["label"] == "IsoMax+ES"
        assert report["provenance"]["config_hash"] == cfg.config_hash()
        assert [r["seed"] for r in report["per_seed"]] == [0, 1]
        for key in harness.SUMMARY_METRICS:
            assert set(report["summary"][key]) == {"mean", "std"}
        for r in report["per_seed"]:
            for key in ("mean_in_entropy", "mean_out_entropy"):
                assert 0 <= r[key] <= math.log(4)
        for seed in (0, 1):
            ins, outs = read_score_csv(out / f"scores_seed{seed}.csv")
            assert len(ins) == 24 and len(outs) == 60  # 20% of 4 x 30
            assert (out / f"checkpoint_seed{seed}.eod").exists()

    def test_single_seed_has_no_std(self, tmp_path):
        report = harness.run_experiment(tiny(tmp_path, seeds=(2,)), write=False)
        assert "std" not in report["summary"]["auroc"]

    def test_byte_identical_reruns(self, tmp_path):
        harness.run_experiment(tiny(tmp_path, "a"))
        harness.run_experiment(tiny(tmp_path, "a2"))
        a, b = tmp_path / "a", tmp_path / "a2"
        for name in ("scores_seed0.csv", "scores_seed1.csv", "checkpoint_seed0.eod"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        ra = json.loads((a / "report.json").read_text())
        rb = json.loads((b / "report.json").read_text())
        ra["config"].pop("output_dir"), rb["config"].pop("output_dir")
        assert ra["per_seed"] == rb["per_seed"] and ra["summary"] == rb["summary"]

    def test_training_never_sees_ood(self, tmp_path):
        cfg = tiny(tmp_path, seeds=(0,))
        pair = harness.build_pair(cfg, 0)
        poisoned = OodPair(pair.in_train, pair.in_test, np.full_like(pair.out_test, 1e6))
        a = harness.train_seed(cfg, 0, pair)
        b = harness.train_seed(cfg, 0, poisoned)
        for name, t in a.params.tensors.items():
            assert t.tobytes() == b.params.tensors[name].tobytes()
        assert a.history == b.history

    def test_checkpoint_rescoring_matches(self, tmp_path):
        cfg = tiny(tmp_path, seeds=(0,))
        report = harness.run_experiment(cfg)
        result, _, _ = harness.evaluate_checkpoint(cfg, tmp_path / "run" / "checkpoint_seed0.eod", 0)
        assert result["auroc"] == report["per_seed"][0]["auroc"]
        m = harness.metrics_from_score_csv(tmp_path / "run" / "scores_seed0.csv")
        assert m["auroc"] == report["per_seed"][0]["auroc"]

    def test_errors_name_the_step(self, tmp_path):
        cfg = tiny(tmp_path, ring_min=3.5, ring_max=4.5, min_separation=1.0)
        with pytest.raises(harness.ExperimentError, match="seed 0: building data failed"):
            harness.run_experiment(cfg, write=False)


def _ex(probs):
    p = np.asarray(probs, dtype=np.float64)
    h = float(-(p[p > 0] * np.log(p[p > 0])).sum())
    return ScoredExample(-h, int(p.argmax()), h, float(p.max()))


class TestHistograms:
    def test_one_hot_and_uniform_land_in_outer_bins(self):
        ins = [_ex([1, 0, 0, 0])] * 5
        outs = [_ex([0.25] * 4)] * 3
        rows = harness.emit_histograms(ins, outs, 10, 4)
        assert rows[0]["entropy_in"] == 5 and rows[-1]["entropy_out"] == 3
        assert rows[-1]["max_prob_in"] == 5 and rows[0]["max_prob_out"] == 3
        assert rows[-1]["entropy_hi"] == pytest.approx(math.log(4))

    def test_counts_sum(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(3), size=40)
        rows = harness.emit_histograms([_ex(r) for r in p[:25]], [_ex(r) for r in p[25:]], 7, 3)
        assert sum(r["entropy_in"] for r in rows) == 25
        assert sum(r["max_prob_out"] for r in rows) == 15

    def test_bad_arguments(self):
        with pytest.raises(ContractError):
            harness.emit_histograms([_ex([1, 0])], [], 1, 2)
        with pytest.raises(ContractError):
            harness.emit_histograms([], [], 5, 2)


class TestSweep:
    def test_single_scale_matches_plain_run(self, tmp_path):
        cfg = tiny(tmp_path, seeds=(0,))
        rows, reports = harness.entropic_scale_sweep(cfg, [10.0], write=False)
        plain = harness.run_experiment(cfg, write=False)
        assert reports[(10.0, 1.0)]["per_seed"] == plain["per_seed"]
        assert rows[0]["auroc"] == plain["summary"]["auroc"]["mean"]

    def test_scale_order_permutes_rows(self, tmp_path):
        cfg = tiny(tmp_path, seeds=(0,))
        a, _ = harness.entropic_scale_sweep(cfg, [1.0, 3.0], write=False)
        b, _ = harness.entropic_scale_sweep(cfg, [3.0, 1.0], write=False)
        assert a == b[::-1]

    def test_forces_isomax_entropic_and_writes_files(self, tmp_path):
        cfg = tiny(tmp_path, seeds=(0,), head="softmax", score="max_prob")
        temps = [1.0, 0.1, 10.0]
        _, reports = harness.entropic_scale_sweep(cfg, [10.0], temperatures=temps, bins=5)
        assert all(r["label"] == "IsoMax+ES" for r in reports.values())
        base = tmp_path / "run" / "scale_10"
        assert (tmp_path / "run" / "sweep.csv").read_text().splitlines()[0] == ",".join(harness.SWEEP_HEADER)
        assert len((base / "temp_0p1" / "histograms.csv").read_text().splitlines()) == 6
        preds = []
        for tag in ("1", "0p1", "10"):
            ins, outs = read_score_csv(base / f"temp_{tag}" / "scores_seed0.csv")
            preds.append([e.predicted_class for e in ins + outs])
        assert preds[0] == preds[1] == preds[2]

    def test_rejects_bad_scales(self, tmp_path):
        with pytest.raises(ContractError):
            harness.entropic_scale_sweep(tiny(tmp_path), [0.0], write=False)


@pytest.fixture(scope="module")
def reports(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cmp")
    iso = harness.run_experiment(tiny(tmp, "iso"), write=False)
    soft = harness.run_experiment(tiny(tmp, "soft", head="softmax"), write=False)
    other = harness.run_experiment(tiny(tmp, "other", sigma=0.7), write=False)
    return iso, soft, other


class TestCompare:
    def test_self_difference_is_zero(self, reports):
        assert all(v == 0 for v in harness.compare_report(reports[0], reports[0]).values())

    def test_antisymmetric(self, reports):
        ab = harness.compare_report(reports[0], reports[1])
        ba = harness.compare_report(reports[1], reports[0])
        assert all(ab[k] == -ba[k] for k in ab)

    def test_mismatched_datasets_rejected(self, reports):
        with pytest.raises(ContractError, match="sigma"):
            harness.compare_report(reports[0], reports[2])

    def test_table(self, reports):
        table = harness.compare_reports(list(reports[:2]))
        assert [c["label"] for c in table["columns"]] == ["IsoMax+ES", "SoftMax+ES"]
        assert "auroc" in harness.format_comparison(table)
        with pytest.raises(ContractError):
            harness.compare_reports([reports[0]])


class TestCli:
    def _cfg_file(self, tmp_path, **changes):
        path = tmp_path / "tiny.cfg"
        path.write_text(format_config(tiny(tmp_path, **changes)))
        return path

    def test_train_evaluate_hist_compare(self, tmp_path, capsys):
        cfg = self._cfg_file(tmp_path, seeds=(0,))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        capsys.readouterr()

        scores = tmp_path / "a" / "scores_seed0.csv"
        assert main(["evaluate", "--scores", str(scores)]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert 0 <= metrics["auroc"] <= 1

        ckpt = tmp_path / "a" / "checkpoint_seed0.eod"
        assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")]) == 0
        assert json.loads(capsys.readouterr().out)["auroc"] == metrics["auroc"]

        assert main(["hist", "--scores", str(scores), "--bins", "4", "--out", str(tmp_path / "h")]) == 0
        assert len((tmp_path / "h" / "histograms.csv").read_text().splitlines()) == 5

        reps = [str(tmp_path / d / "report.json") for d in ("a", "b")]
        assert main(["compare", *reps]) == 0
        assert "(+0.0000)" in capsys.readouterr().out

    def test_sweep(self, tmp_path):
        cfg = self._cfg_file(tmp_path, seeds=(0,))
        assert main(["sweep", "--config", str(cfg), "--scales", "1,10", "--out", str(tmp_path / "s")]) == 0
        assert len((tmp_path / "s" / "sweep.csv").read_text().splitlines()) == 3

    def test_errors_exit_nonzero_with_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense = 1\n")
        assert main(["train", "--config", str(bad)]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ParseError" and "nonsense" in err["message"]
        assert main(["evaluate", "--scores", str(tmp_path / "missing.csv")]) == 1
        assert main(["evaluate"]) == 1
