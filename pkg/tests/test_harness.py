import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from smsc import autodiff as ad
from smsc.channel import feature_budget
from smsc.errors import ConfigError
from smsc.fir import POLICIES
from smsc.harness import cli
from smsc.harness import sweep as sw
from smsc.harness.config import DEFAULT_GRID, ExperimentConfig, config_from_dict, load_config
from smsc.harness.report import CSV_FIELDS, aggregate, emit_csv, emit_plot_series, read_csv
from smsc.harness.sweep import ResultRow
from smsc.metrics import classification_accuracy, rank1_accuracy


def row(seed=0, snr=0.0, method="fir", mode="mtc", rank1=0.5, color=0.5, kind=0.5):
    return ResultRow(seed, snr, method, mode, 3, rank1, color, kind, 0)


# ---------------------------------------------------------------- config


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg == ExperimentConfig()
    assert cfg.experiment.snr_grid_db == DEFAULT_GRID
    assert cfg.experiment.methods == POLICIES
    assert cfg.experiment.num_seeds == 5
    assert cfg.train.learning_rate == 3e-4 and cfg.train.batch_size == 32
    assert (cfg.train.weight_reid, cfg.train.weight_color, cfg.train.weight_type) == (1.0, 0.125, 0.125)


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parent.parent / "configs"
    assert load_config(root / "default.yaml") == ExperimentConfig()
    assert load_config(root / "smoke.yaml").model.n_channel == 4


def test_single_point_grid():
    assert config_from_dict({"experiment": {"snr_grid_db": [0]}}).experiment.snr_grid_db == (0.0,)


def test_num_seeds_zero():
    with pytest.raises(ConfigError, match="num_seeds"):
        config_from_dict({"experiment": {"num_seeds": 0}})


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"train": {"lr": 0.1}})
    assert "learning_rate" in str(exc.value)
    with pytest.raises(ConfigError):
        config_from_dict({"optimizer": {}})


def test_invalid_method():
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": {"methods": ["best"]}})


def test_channel_section_keeps_sweep_bandwidth():
    cfg = config_from_dict({"channel": {"rician_factor": 3.0}})
    assert cfg.channel.bandwidth == 1600.0 and cfg.channel.rician_factor == 3.0


def test_budget_binds_below_two_db_on_defaults():
    cfg = ExperimentConfig()
    n = cfg.model.n_channel
    for snr in cfg.experiment.snr_grid_db:
        assert (feature_budget(cfg.channel, n, snr) < n) == (snr < 2)


def test_config_echo_round_trip(tmp_path, tiny_raw):
    cfg = config_from_dict(tiny_raw)
    load_config(None, echo_to=tmp_path / "echo")
    echoed = tmp_path / "echo" / "config.yaml"
    assert config_from_dict(yaml.safe_load(echoed.read_text())) == ExperimentConfig()
    assert config_from_dict(cfg.to_dict()) == cfg


def test_training_hash_ignores_evaluation_knobs(tiny_raw):
    cfg = config_from_dict(tiny_raw)
    assert cfg.training_hash() == cfg.with_overrides(snr_grid=(3.0,), methods=("full",)).training_hash()
    assert cfg.training_hash() != dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=9)).training_hash()


def test_model_config_modes():
    cfg = ExperimentConfig()
    assert [t.kind for t in cfg.model_config("mtc").tasks] == ["reid", "color", "type"]
    stc = cfg.model_config("stc", "color").tasks
    assert len(stc) == 1 and stc[0].weight == 1.0


# ---------------------------------------------------------------- csv and series


def test_csv_single_row(tmp_path):
    emit_csv([row()], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(CSV_FIELDS)
    assert lines[1] == "0,0.0000,fir,mtc,3,0.5000,0.5000,0.5000,0"


def test_csv_round_trip_and_sorting(tmp_path):
    rng = np.random.default_rng(0)
    rows = [row(seed=s, snr=snr, method=m, mode=mo, rank1=rng.random(), color=rng.random(), kind=rng.random())
            for s in (1, 0) for mo in ("stc", "mtc") for m in ("random", "fir") for snr in (2.0, -6.0)]
    emit_csv(rows, tmp_path / "r.csv")
    back = read_csv(tmp_path / "r.csv")
    assert [r.sort_key() for r in back] == sorted(r.sort_key() for r in rows)
    originals = {r.sort_key(): r for r in rows}
    for r in back:
        o = originals[r.sort_key()]
        for f in ("rank1", "color_acc", "type_acc"):
            assert abs(getattr(r, f) - getattr(o, f)) <= 5e-5


def test_csv_nan_written(tmp_path):
    emit_csv([row(rank1=float("nan"))], tmp_path / "r.csv")
    assert ",nan," in (tmp_path / "r.csv").read_text()
    assert math.isnan(read_csv(tmp_path / "r.csv")[0].rank1)


def test_csv_empty():
    with pytest.raises(ValueError):
        emit_csv([], "unused.csv")


def test_aggregate_examples():
    assert aggregate([row(rank1=0.7)], "rank1") == [(0.0, "fir", "mtc", 0.7, 0.0, 1)]
    (_, _, _, mean, se, n), = aggregate([row(seed=0, rank1=0.4), row(seed=1, rank1=0.6)], "rank1")
    assert mean == pytest.approx(0.5) and n == 2
    assert se == pytest.approx(np.std([0.4, 0.6], ddof=1) / np.sqrt(2))


def test_plot_series_recompute(tmp_path):
    rng = np.random.default_rng(1)
    rows = [row(seed=s, snr=snr, method=m, rank1=rng.random(), color=rng.random(), kind=rng.random())
            for s in range(3) for m in ("fir", "full") for snr in (-2.0, 4.0)]
    emit_csv(rows, tmp_path / "r.csv")
    emit_plot_series(rows, tmp_path)
    parsed = read_csv(tmp_path / "r.csv")
    for task, metric in (("rank1", "rank1"), ("color", "color_acc"), ("type", "type_acc")):
        lines = (tmp_path / f"series_{task}.csv").read_text().splitlines()
        assert lines[0] == "snr_db,method,mode,mean,stderr,n"
        for line in lines[1:]:
            snr, method, mode, mean, se, n = line.split(",")
            vals = [getattr(r, metric) for r in rows if r.snr_db == float(snr) and r.method == method]
            assert float(mean) == pytest.approx(np.mean(vals), abs=1e-6)
            assert float(se) == pytest.approx(np.std(vals, ddof=1) / np.sqrt(len(vals)), abs=1e-6)
            csv_vals = [getattr(r, metric) for r in parsed if r.snr_db == float(snr) and r.method == method]
            assert float(mean) == pytest.approx(np.mean(csv_vals), abs=1e-4)
            assert int(n) == 3


# ---------------------------------------------------------------- sweep


def test_sweep_row_count_and_budgets(tiny_raw):
    cfg = config_from_dict(tiny_raw)
    rows = sw.run_sweep(cfg, persist=False)
    assert len(rows) == 2 * 3 * 4 * 2
    for r in rows:
        assert r.budget == feature_budget(cfg.channel, cfg.model.n_channel, r.snr_db)
        for v in (r.rank1, r.color_acc, r.type_acc):
            assert 0.0 <= v <= 1.0


def test_fir_at_full_budget_equals_full(tiny_raw):
    cfg = config_from_dict(tiny_raw)
    units = sw.train_cell(cfg, 0, "mtc")
    rows = sw.evaluate_cell(cfg, 0, "mtc", units, snr_grid=[20.0], methods=["fir", "full"])
    fir, full = rows
    assert (fir.rank1, fir.color_acc, fir.type_acc) == (full.rank1, full.color_acc, full.type_acc)


def test_full_noiseless_matches_model_accuracy(tiny_raw):
    cfg = config_from_dict(tiny_raw)
    units = sw.train_cell(cfg, 0, "mtc")
    ds = sw.seeded_dataset(cfg, 0)
    (r,) = sw.evaluate_cell(cfg, 0, "mtc", units, ds, snr_grid=[300.0], methods=["full"])
    p = units[0].pipeline
    test, nq = ds.test, len(ds["query"])
    with ad.no_grad():
        out = p.forward(test.x)
    assert abs(r.rank1 - rank1_accuracy(out.ehat.data[:nq], out.ehat.data[nq:], test.ids[:nq], test.ids[nq:])) <= 0.005
    assert abs(r.color_acc - classification_accuracy(out.probs[1].data, test.colors)) <= 0.005
    assert abs(r.type_acc - classification_accuracy(out.probs[2].data, test.types)) <= 0.005


def test_stc_units_share_the_slot(tiny_raw):
    cfg = config_from_dict(tiny_raw)
    units = sw.train_cell(cfg, 0, "stc")
    assert [u.name for u in units] == ["stc_reid", "stc_color", "stc_type"]
    slot = feature_budget(cfg.channel, 10**6, 8.0)  # uncapped features in one slot
    assert sum(u.budget(cfg.channel, 8.0) for u in units) == min(slot, 3 * cfg.model.n_channel)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_gives_failed_rows(tiny_raw, tmp_path):
    tiny_raw["train"]["learning_rate"] = 1e300
    cfg = config_from_dict(tiny_raw)
    rows = sw.run_cell(cfg, 0, "mtc")
    assert len(rows) == 3 * 4
    assert all(math.isnan(r.rank1) for r in rows)
    assert list(sw.run_dir(cfg, 0).glob("*failure.txt"))


# ---------------------------------------------------------------- cli


def test_cli_help(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    for command in ("train", "rank", "retrain", "sweep", "eval"):
        assert command in out
    assert cli.main(["sweep", "--help"]) == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--snr", "--method", "--mode", "--out"):
        assert flag in out


def test_cli_unknown_subcommand(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_unknown_flag(capsys):
    assert cli.main(["sweep", "--fast"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_no_command():
    assert cli.main([]) == 1


def test_cli_bad_config(tmp_path):
    (tmp_path / "bad.yaml").write_text("experiment: {num_seeds: 0}\n")
    assert cli.main(["sweep", "--config", str(tmp_path / "bad.yaml")]) == 1
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_cli_retrain_without_rank(tiny_config_file, tmp_path):
    out = str(tmp_path / "o")
    assert cli.main(["train", "--config", str(tiny_config_file), "--out", out, "--mode", "mtc"]) == 0
    assert cli.main(["retrain", "--config", str(tiny_config_file), "--out", out, "--mode", "mtc"]) == 1


def test_cli_stepwise_flow(tiny_config_file, tmp_path, capsys):
    out = tmp_path / "o"
    args = ["--config", str(tiny_config_file), "--out", str(out), "--seed", "3", "--mode", "mtc"]
    for command in ("train", "rank", "retrain"):
        assert cli.main([command, *args]) == 0
    runs = sorted((out / "runs").iterdir())
    assert [r.name[-6:] for r in runs] == ["-seed3", "-seed4"]
    run = runs[0]
    names = {p.name for p in run.iterdir()}
    assert {"config.yaml", "mtc_stage1.npz", "mtc_importance.txt", "mtc_stage2.npz",
            "mtc_stage1_log.csv", "mtc_stage2_log.csv"} <= names
    assert cli.main(["eval", *args, "--snr", "0", "--method", "fir"]) == 0
    printed = capsys.readouterr().out
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 1 + 2  # two seeds, one snr, one method, one mode
    assert printed.endswith((out / "eval.csv").read_text())


def test_cli_sweep_outputs(tiny_config_file, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep", "--config", str(tiny_config_file), "--out", str(out), "--mode", "stc"]) == 0
    for name in ("config.yaml", "results.csv", "series_rank1.csv", "series_color.csv", "series_type.csv"):
        assert (out / name).exists()
    rows = read_csv(out / "results.csv")
    assert {r.mode for r in rows} == {"stc"}
