import glob
import os

import numpy as np
import pytest

from glcert.certify import CalibrationError
from glcert.cli import main
from glcert.data import Dataset, dataset_to_csv, gen_uniform_cube
from glcert.experiments import (ExperimentConfig, ExperimentError,
                                config_from_ini, config_hash, read_table,
                                run_label_sweep, run_robust_curves,
                                run_timing, write_table)

TINY = dict(dataset="halfmoon", seeds=(0,), train_count=60, test_count=30,
            validation_count=30, labeled_counts=(60,), graph_k=6,
            attacks=("direct",), r_grid=(0.05, 0.1), budget_count=2,
            variants=("gl", "knn"), calib_fraction=0.5, calib_seeds=(0, 1),
            c_small_grid=(1.0,), c_big_grid=(1.0,), timing_ks=(3, 5),
            timing_repeats=1)


def _tiny(mode, out_dir, **extra):
    return ExperimentConfig(mode=mode, out_dir=str(out_dir),
                            **{**TINY, **extra})


INI_TEXT = """\
[experiment]
mode = robust_curve
dataset = halfmoon
seeds = 0 1
variants = gl knn

[data]
train_count = 50
labeled_counts = 50
noise_std = 0.15

[graph]
graph_k = 7

[attack]
attacks = direct ksa
r_grid = 0.05, 0.1, 0.2
direction_sign = toward_opponent

[calibration]
c_small_grid = 0.5 1.0
"""


def test_config_from_ini(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(INI_TEXT)
    cfg = config_from_ini(path)
    assert cfg.mode == "robust_curve"
    assert cfg.seeds == (0, 1)
    assert cfg.variants == ("gl", "knn")
    assert cfg.train_count == 50
    assert cfg.noise_std == 0.15
    assert cfg.graph_k == 7
    assert cfg.attacks == ("direct", "ksa")
    assert cfg.r_grid == (0.05, 0.1, 0.2)
    assert cfg.c_small_grid == (0.5, 1.0)
    # untouched keys keep their defaults
    assert cfg.budget_count == ExperimentConfig().budget_count
    # keyword overrides win
    assert config_from_ini(path, mode="timing").mode == "timing"


def test_config_from_ini_rejects_unknowns(tmp_path):
    bad_key = tmp_path / "k.ini"
    bad_key.write_text("[experiment]\nmode = certify\nfrobnicate = 1\n")
    with pytest.raises(ExperimentError, match="frobnicate"):
        config_from_ini(bad_key)
    bad_section = tmp_path / "s.ini"
    bad_section.write_text("[wormhole]\nx = 1\n")
    with pytest.raises(ExperimentError, match="wormhole"):
        config_from_ini(bad_section)
    with pytest.raises(ExperimentError):
        config_from_ini(tmp_path / "missing.ini")


def test_experiment_config_validation():
    with pytest.raises(ExperimentError):
        ExperimentConfig(seeds=())
    with pytest.raises(ExperimentError):
        ExperimentConfig(mode="explore")
    with pytest.raises(ExperimentError):
        ExperimentConfig(r_grid=(0.2, 0.1))
    with pytest.raises(ExperimentError):
        ExperimentConfig(attacks=("direct", "pgd"))
    with pytest.raises(ExperimentError):
        ExperimentConfig(variants=("gl", "dropout"))
    with pytest.raises(ExperimentError):
        ExperimentConfig(dataset="cifar")
    with pytest.raises(ExperimentError):
        ExperimentConfig(budget_count=1)


def test_effective_defense_budget():
    assert ExperimentConfig().effective_defense_budget == 0.2
    assert ExperimentConfig(
        defense_budget=0.07).effective_defense_budget == 0.07


def test_config_hash_ignores_out_dir():
    a = ExperimentConfig(out_dir="run1")
    b = ExperimentConfig(out_dir="run2")
    assert config_hash(a) == config_hash(b)
    c = ExperimentConfig(out_dir="run1", seeds=(0,))
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_table_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    header = ("name", "value", "count")
    rows = [("a", 0.1 + 0.2, 3), ("b", 1e-17, -2)]
    write_table(path, header, rows, "deadbeef")
    cfg_hash, got_header, got_rows = read_table(path)
    assert cfg_hash == "deadbeef"
    assert tuple(got_header) == header
    assert got_rows == rows          # .17g survives the round trip exactly
    with pytest.raises(ExperimentError):
        write_table(path, header, [("a", 1.0)], "x")
    plain = tmp_path / "plain.csv"
    plain.write_text("a,b\n1,2\n")
    with pytest.raises(ExperimentError):
        read_table(plain)


def test_curves_r_zero_row_is_clean(tmp_path):
    cfg = _tiny("robust_curve", tmp_path)
    records, violations = run_robust_curves(cfg)
    assert violations == []
    clean = {(r.seed, r.variant): r.accuracy for r in records
             if r.attack == "none"}
    _, header, rows = read_table(tmp_path / "curve_halfmoon_direct.csv")
    assert header[0] == "r"
    r0 = [row for row in rows if row[0] == 0][0]
    gl_mean = np.mean([v for (s, var), v in clean.items() if var == "gl"])
    col = header.index("gl_mean")
    assert r0[col] == pytest.approx(100.0 * gl_mean)   # table is in percent
    svgs = glob.glob(str(tmp_path / "*.svg"))
    assert svgs, "curve plot missing"


def test_label_sweep_single_size_trend_undefined(tmp_path):
    cfg = _tiny("label_sweep", tmp_path)
    _, (mean_rows, trend_rows), violations = run_label_sweep(cfg)
    assert violations == []
    assert trend_rows and all(t[-1] == "undefined" for t in trend_rows)
    _, _, rows = read_table(tmp_path / "label_sweep_trends_halfmoon.csv")
    assert all(row[-1] == "undefined" for row in rows)


def test_rerun_is_byte_identical(tmp_path):
    out1, out2 = tmp_path / "one", tmp_path / "two"
    for out in (out1, out2):
        os.makedirs(out)
        run_robust_curves(_tiny("robust_curve", out))
    names = sorted(os.path.basename(p) for p in glob.glob(str(out1 / "*")))
    assert names
    for name in names:
        if name.startswith("runlog"):
            continue        # wall_time column is legitimately host-dependent
        b1 = (out1 / name).read_bytes()
        b2 = (out2 / name).read_bytes()
        assert b1 == b2, f"{name} differs between identical runs"


def test_timing_rows(tmp_path):
    cfg = _tiny("timing", tmp_path)
    rows = run_timing(cfg)
    assert [r[0] for r in rows] == [3, 5]
    for row in rows:
        assert row[1] > 0 and row[2] > 0        # both timings positive
        assert row[3] > 0 and row[4] > 0        # peak memory measured
    _, header, disk = read_table(tmp_path / "timing_halfmoon.csv")
    assert len(disk) == 2


def test_main_gen_data_and_artifacts(tmp_path, capsys):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[experiment]\ndataset = halfmoon\n"
                   "[data]\ntrain_count = 40\ntest_count = 20\n"
                   "validation_count = 20\nlabeled_counts = 40\n")
    rc = main(["gen-data", "--config", str(ini), "--out", str(tmp_path)])
    assert rc == 0
    for split in ("train", "test", "validation"):
        assert (tmp_path / f"halfmoon_{split}.csv").exists()
    assert "config" in capsys.readouterr().out


def test_main_prune_and_attack_round_trip(tmp_path):
    ds = gen_uniform_cube(80, 2, lambda x: float(x[0] >= 0.5), 3)
    src = tmp_path / "train.csv"
    dataset_to_csv(ds, src)
    pruned = tmp_path / "pruned.csv"
    rc = main(["prune", "--input", str(src), "--output", str(pruned),
               "--a", "0.05"])
    assert rc == 0 and pruned.exists()
    adv = tmp_path / "adv.csv"
    rc = main(["attack", "--input", str(src), "--output", str(adv),
               "--kind", "direct", "--r", "0.1", "--scope", "all"])
    assert rc == 0
    assert adv.read_text().startswith("x0,x1,xadv0,xadv1,shift")


def test_main_exit_code_config_errors(tmp_path, capsys):
    assert main(["gen-data", "--config", str(tmp_path / "nope.ini")]) == 3
    ds = gen_uniform_cube(20, 2, lambda x: 1.0, 0)
    src = tmp_path / "one.csv"
    dataset_to_csv(ds, src)
    out = tmp_path / "o.csv"
    # gradient attack without a surrogate model
    rc = main(["attack", "--input", str(src), "--output", str(out),
               "--kind", "bb_lr", "--r", "0.1"])
    assert rc == 3
    # prune grid search without a validation file
    rc = main(["prune", "--input", str(src), "--output", str(out),
               "--grid", "0.1"])
    assert rc == 3
    capsys.readouterr()


def test_main_exit_code_calibration(tmp_path, monkeypatch, capsys):
    import glcert.cli as cli_mod

    def boom(cfg):
        raise CalibrationError("no feasible pair", None, "report")

    monkeypatch.setattr(cli_mod, "run_certify_experiment", boom)
    rc = main(["certify", "--out", str(tmp_path)])
    assert rc == 2
    assert "calibration failed" in capsys.readouterr().err


def test_main_certify_tiny(tmp_path, capsys):
    ini = tmp_path / "cfg.ini"
    ini.write_text(
        "[experiment]\nseeds = 0\n"
        "[data]\ntrain_count = 60\ntest_count = 30\nvalidation_count = 30\n"
        "labeled_counts = 60\n"
        "[graph]\ngraph_k = 6\n"
        "[attack]\nattacks = direct\nr_grid = 0.05 0.1\nbudget_count = 2\n"
        "[calibration]\ncalib_fraction = 0.5\ncalib_seeds = 0 1\n"
        "c_small_grid = 1.0\nc_big_grid = 1.0\n")
    rc = main(["certify", "--config", str(ini), "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "labeled_count=60" in out
    assert (tmp_path / "certify_halfmoon.csv").exists()
    assert (tmp_path / "calibration_halfmoon_60.txt").exists()
