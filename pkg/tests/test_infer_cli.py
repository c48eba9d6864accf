"""Ensemble inference, run configuration, and the command-line surface."""
import csv
import datetime
import json
import os

import numpy as np
import pytest

from floodfusion.cli import main
from floodfusion.config import ConfigError, RunConfig, load_config
from floodfusion.datapipe import load_manifest
from floodfusion.infer import (
    HISTORY_DAYS,
    Ensemble,
    ensemble_infer,
    records_to_series_input,
)
from floodfusion.model import init_params, save_checkpoint
from floodfusion.synthsim import SceneParams, gen_dataset
from floodfusion.trainer import predict


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("ds"))
    params = SceneParams(seed=6, grid_chips=1, years=[2018, 2019],
                         composites_per_year=20, sequence_stride=5,
                         cloud_prob=0.3)
    manifest = gen_dataset(params, out)
    return out, manifest


def _checkpoints(tmp_path, n=2, kind="fusion", **arch):
    paths = []
    arch.setdefault("width", 4)
    arch.setdefault("hidden_size", 4)
    for seed in range(n):
        m = init_params(seed=seed, kind=kind, **arch)
        p = os.path.join(tmp_path, f"m{seed}.ckpt")
        save_checkpoint(m, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# ensemble


def test_ensemble_mean_and_spread(small_dataset, tmp_path):
    _, manifest = small_dataset
    paths = _checkpoints(tmp_path, n=3)
    ens = Ensemble.from_checkpoints(paths)
    records = ensemble_infer(ens, manifest)
    assert len(records) == len(manifest)

    from floodfusion.datapipe import load_manifest_chip
    feats = np.stack([load_manifest_chip(manifest, r).features
                      for r in manifest.chips]).astype(np.float32)
    member_preds = np.stack([predict(m, feats) for m in ens.members])
    for i, rec in enumerate(records):
        assert np.allclose(rec.mean, member_preds[:, i].mean(axis=0),
                           atol=1e-12)
        assert np.allclose(
            rec.spread,
            member_preds[:, i].max(axis=0) - member_preds[:, i].min(axis=0),
            atol=1e-12)
        assert rec.spread.min() >= 0.0


def test_ensemble_rejects_architecture_mismatch(tmp_path):
    p1 = _checkpoints(tmp_path, n=1)[0]
    m2 = init_params(seed=0, kind="fusion", width=8, hidden_size=4)
    p2 = os.path.join(tmp_path, "other.ckpt")
    save_checkpoint(m2, p2)
    with pytest.raises(ValueError):
        Ensemble.from_checkpoints([p1, p2])
    with pytest.raises(ValueError):
        Ensemble.from_checkpoints([])


def test_infer_skips_chips_overlapping_excluded_window(small_dataset,
                                                       tmp_path):
    _, manifest = small_dataset
    ens = Ensemble.from_checkpoints(_checkpoints(tmp_path, n=1))
    all_dates = sorted({r.date for r in manifest.chips})
    bad = all_dates[1]
    records = ensemble_infer(ens, manifest,
                             exclude_range=(bad, bad))
    kept_dates = {r.date for r in records}
    # a chip is dropped when [date - HISTORY_DAYS, date] touches the range
    for d in all_dates:
        overlaps = (d - datetime.timedelta(days=HISTORY_DAYS)) <= bad <= d
        assert (d not in kept_dates) == overlaps
    assert len(records) < len(manifest)


def test_records_to_series_input_groups_by_date(small_dataset, tmp_path):
    _, manifest = small_dataset
    ens = Ensemble.from_checkpoints(_checkpoints(tmp_path, n=1))
    records = ensemble_infer(ens, manifest)
    by_date = records_to_series_input(records)
    assert set(by_date) == {r.date for r in records}
    for date, vals in by_date.items():
        expect = [float(r.mean.mean()) for r in records if r.date == date]
        assert vals == expect


# ---------------------------------------------------------------------------
# run configuration


def _write_config(tmp_path, doc):
    path = os.path.join(tmp_path, "run.json")
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def test_load_config_round_trip(tmp_path):
    path = _write_config(tmp_path, {
        "schema_version": 1,
        "scene": {"seed": 3, "cloud_prob": 0.4},
        "train": {"batch_size": 4, "optimizer": "adam"},
    })
    cfg = load_config(path)
    assert cfg.scene_params().cloud_prob == 0.4
    tc = cfg.train_config(leave_out_year=2018)
    assert tc.batch_size == 4 and tc.optimizer == "adam"
    # overrides win over file values
    assert cfg.scene_params(cloud_prob=0.1).cloud_prob == 0.1


def test_load_config_rejects_unknown_keys_with_path(tmp_path):
    path = _write_config(tmp_path, {"schema_version": 1,
                                    "train": {"learning_rate": 0.1}})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.path == "train.learning_rate"

    path = _write_config(tmp_path, {"schema_version": 1, "extra": {}})
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_rejects_bad_schema_and_values(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write_config(tmp_path, {"schema_version": 99}))
    with pytest.raises(ConfigError):
        load_config(_write_config(tmp_path, {
            "schema_version": 1, "scene": {"cloud_prob": 1.5}}))
    bad = os.path.join(tmp_path, "bad.json")
    with open(bad, "w") as fh:
        fh.write("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_train_config_requires_leave_out_year():
    with pytest.raises(ConfigError):
        RunConfig().train_config()


# ---------------------------------------------------------------------------
# command-line surface


def test_cli_synth_is_deterministic(tmp_path):
    d1 = os.path.join(tmp_path, "a")
    d2 = os.path.join(tmp_path, "b")
    args = ["--seed", "4", "--grid-chips", "1", "--years", "2018",
            "--stride", "8"]
    assert main(["synth", "--out", d1] + args) == 0
    assert main(["synth", "--out", d2] + args) == 0
    m1 = load_manifest(os.path.join(d1, "manifest.json"))
    m2 = load_manifest(os.path.join(d2, "manifest.json"))
    assert [r.path for r in m1.chips] == [r.path for r in m2.chips]
    for rec in m1.chips:
        b1 = open(os.path.join(d1, rec.path), "rb").read()
        b2 = open(os.path.join(d2, rec.path), "rb").read()
        assert b1 == b2


def test_cli_ingest_builds_manifest(small_dataset, tmp_path):
    data_dir, manifest = small_dataset
    out = os.path.join(tmp_path, "manifest2.json")
    assert main(["ingest", "--chips", data_dir, "--out", out]) == 0
    rebuilt = load_manifest(out)
    assert rebuilt.year_counts() == manifest.year_counts()


def test_cli_exit_code_2_for_config_errors(tmp_path, capsys):
    bad = os.path.join(tmp_path, "bad.json")
    with open(bad, "w") as fh:
        json.dump({"schema_version": 1, "scene": {"woops": 1}}, fh)
    code = main(["synth", "--out", os.path.join(tmp_path, "o"),
                 "--config", bad])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("ERROR ")
    doc = json.loads(err[len("ERROR "):])
    assert doc["error"] == "config"
    assert doc["path"] == "scene.woops"


def test_cli_exit_code_3_for_missing_files(tmp_path, capsys):
    code = main(["train", "--data", os.path.join(tmp_path, "nowhere"),
                 "--out", str(tmp_path), "--leave-out", "2018"])
    assert code == 3
    doc = json.loads(capsys.readouterr().err[len("ERROR "):])
    assert doc["error"] == "missing-file"


def test_cli_exit_code_1_for_value_errors(small_dataset, tmp_path, capsys):
    data_dir, _ = small_dataset
    code = main(["train", "--data", data_dir, "--out", str(tmp_path),
                 "--leave-out", "1999", "--width", "4", "--hidden", "4",
                 "--schedule", "1:1e-3"])
    assert code == 1
    assert json.loads(capsys.readouterr().err[len("ERROR "):])


def test_cli_train_then_eval_and_infer(small_dataset, tmp_path, capsys):
    data_dir, _ = small_dataset
    run_dir = os.path.join(tmp_path, "run")
    code = main(["train", "--data", data_dir, "--out", run_dir,
                 "--leave-out", "2019", "--model", "fusion", "--width", "4",
                 "--hidden", "4", "--batch-size", "2", "--optimizer",
                 "adam", "--schedule", "1:1e-3", "--no-augment"])
    assert code == 0
    ckpt = os.path.join(run_dir, "fusion_loo2019.ckpt")
    assert os.path.exists(ckpt)

    eval_dir = os.path.join(tmp_path, "eval")
    assert main(["eval", "--checkpoint", ckpt, "--data", data_dir,
                 "--out", eval_dir]) == 0
    assert os.path.exists(os.path.join(eval_dir, "metrics.csv"))
    assert os.path.exists(os.path.join(eval_dir, "error_map.bin"))
    assert os.path.exists(os.path.join(eval_dir, "series.csv"))

    infer_dir = os.path.join(tmp_path, "infer")
    assert main(["infer", "--checkpoint", ckpt, "--checkpoint", ckpt,
                 "--data", data_dir, "--out", infer_dir,
                 "--dump-maps"]) == 0
    with open(os.path.join(infer_dir, "series.csv")) as fh:
        series_rows = list(csv.DictReader(fh))
    assert series_rows
    with open(os.path.join(infer_dir, "maxima.csv")) as fh:
        max_rows = list(csv.DictReader(fh))
    assert {r["year"] for r in max_rows} == {"2018", "2019"}
    date0 = series_rows[0]["date"]
    assert os.path.exists(os.path.join(infer_dir, f"map_{date0}.png"))
    assert os.path.exists(os.path.join(infer_dir, f"map_{date0}.bin"))

    capsys.readouterr()  # drop accumulated stdout


def test_cli_gradcheck_smoke(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
