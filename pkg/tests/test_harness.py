import json
from dataclasses import replace

import numpy as np
import pytest

from bcgauth import harness
from bcgauth.bcg_pipeline import PipelineConfig
from bcgauth.cli import main
from bcgauth.evolution import GaConfig
from bcgauth.harness import (
    Dataset,
    DatasetError,
    DurationError,
    ExperimentConfig,
    SynthConfig,
    build_trainset,
    build_tuneset,
    cmd_auth,
    cmd_enroll,
    cmd_ga,
    cmd_report,
    cmd_sweep_w,
    cmd_synth,
)
from bcgauth.neuralnet import CnnGenome
from bcgauth.sensor_model import read_recording

SMALL_GENOME = CnnGenome(filters_per_layer=4, dense_units=16, batch_size=32)


def small_config(root, **kw):
    base = dict(
        dataset_root=str(root), synth=SynthConfig(session_seconds=40.0), genome=SMALL_GENOME,
        enroll_minutes=0.5, tune_minutes=1 / 6, epochs=2, seed=3,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = small_config(root)
    cmd_synth(cfg, n_validation=3, n_external=2, sessions=2)
    return cfg


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_layout_counts(tmp_path):
    cfg = small_config(tmp_path / "d", synth=SynthConfig(session_seconds=4.0))
    man = cmd_synth(cfg, n_validation=12, n_external=10, sessions=3)
    recs = sorted((tmp_path / "d" / "recordings").glob("*.json"))
    assert len(recs) == 12 * 3 + 10
    assert not set(man.validation_subjects) & set(man.external_subjects)
    assert man.sessions_of("E03") == ["1"]


def test_synth_single_session_and_intervals(tmp_path):
    cfg = small_config(tmp_path / "d", synth=SynthConfig(session_seconds=8.0, intervals_per_session=2))
    man = cmd_synth(cfg, n_validation=2, n_external=1, sessions=1)
    assert all(len(man.recordings[s]["1"]) == 2 for s in man.recordings)
    ds = Dataset(cfg.root, cfg.pipeline)
    st = ds.session("V01", "1")
    # no segment spans the file boundary: 2 files x (4 - 3 + 1) segments, with a gap in start times
    assert len(st) == 4
    assert st.start_s.tolist() == [0, 1, 4, 5]


def test_synth_is_deterministic_and_refuses_overwrite(tmp_path):
    for name in ("a", "b"):
        cmd_synth(small_config(tmp_path / name, synth=SynthConfig(session_seconds=5.0)), 2, 1, 2)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    with pytest.raises(DatasetError):
        cmd_synth(small_config(tmp_path / "a"), 2, 1, 2)


def test_split_counts_and_hygiene(small_ds):
    ds = Dataset(small_ds.root, small_ds.pipeline)
    data = build_trainset(ds, "V01", small_ds)
    # 30 s enrollment window with w = 3: 28 segments per subject
    assert len(data.positives) == 30 - 3 + 1
    assert len(data.negatives) == 2 * (30 - 3 + 1)
    tx, ty = build_tuneset(ds, "V01", small_ds)
    assert len(tx) == 3 * (10 - 3 + 1) and ty.sum() == 10 - 3 + 1
    enroll = ds.enroll_split("V01", "1", small_ds)
    tune = ds.tune_split("V01", "1", small_ds)
    assert enroll.start_s.max() + 3 <= tune.start_s.min()
    with pytest.raises(DatasetError):
        build_trainset(ds, "E01", small_ds)


def test_full_scale_split_counts():
    cfg = ExperimentConfig()
    st = harness.SessionTensors(np.zeros((598, 1)), np.arange(598))
    assert len(st.window(0, cfg.enroll_seconds, 3)) == 478
    assert len(st.window(cfg.enroll_seconds, cfg.enroll_seconds + cfg.tune_seconds, 3)) == 118


def test_enroll_is_reproducible(small_ds, tmp_path):
    ds = Dataset(small_ds.root, small_ds.pipeline)
    for k in ("a", "b"):
        cmd_enroll(small_ds, "V02", out_dir=tmp_path / k, dataset=ds)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    rep = json.loads((tmp_path / "a" / "V02.train.json").read_text())
    assert rep["n_positive"] == 28 and rep["n_negative"] == 56


def test_auth_duration_and_trace(small_ds, tmp_path):
    res = cmd_enroll(small_ds, "V01", out_dir=tmp_path)
    rec_path = small_ds.root / "recordings" / "V01_s2_i1.json"
    out = cmd_auth(small_ds, res.model_path, rec_path, "V01", 0.5, 7)
    assert out["seconds_used"] == 9 and len(out["confidences"]) == 7
    assert out["decision"] in ("accept", "reject")
    rec = read_recording(rec_path)
    short = replace(rec, accel=rec.accel.select(rec.accel.timestamps < 8000),
                    gyro=rec.gyro.select(rec.gyro.timestamps < 8000))
    with pytest.raises(DurationError, match="s \\+ w - 1 = 9"):
        cmd_auth(small_ds, res.model, short, "V01", 0.5, 7)


def test_report_grid_and_reproducibility(small_ds, tmp_path):
    ds = Dataset(small_ds.root, small_ds.pipeline)
    models = harness.enroll_all(small_ds, dataset=ds)
    for k in ("a", "b"):
        cmd_report(small_ds, models, out_dir=tmp_path / k, dataset=ds)
    a = tree_bytes(tmp_path / "a")
    assert a == tree_bytes(tmp_path / "b")
    assert len([n for n in a if n.startswith("roc_")]) == 2 * 4
    grid = json.loads(a["report.json"])["reports"]
    for g in grid:
        for k in ("far", "frr", "tar", "trr_validation", "trr_external", "accuracy", "eer", "auc"):
            assert 0.0 <= g[k] <= 1.0


def test_ga_log_accounting(small_ds, tmp_path):
    cfg = replace(small_ds, epochs=1, ga=GaConfig(population=4, generations=2, elite_fraction=0.25,
                                                   random_parents=1, children_per_gen=2))
    res = cmd_ga(cfg, "V01", out_dir=tmp_path)
    lines = (tmp_path / "V01.ga_log.jsonl").read_text().splitlines()
    assert len(lines) == 4 * 2
    assert sum(json.loads(x)["cached"] for x in lines) == 2
    best = res.best.genome
    # the best-genome file feeds straight back into enrollment
    rc = main(["enroll", "V03", "--config", str(_write_cfg(cfg, tmp_path)), "--genome",
               str(tmp_path / "V01.best_genome.json"), "--out", str(tmp_path / "m")])
    assert rc == 0
    saved = json.loads((tmp_path / "m" / "V03.train.json").read_text())
    assert saved["genome"] == best.traits()


def test_sweep_w_rows(small_ds, tmp_path):
    cfg = replace(small_ds, epochs=1)
    rows = cmd_sweep_w(cfg, (1, 2), subjects=["V01"], out_dir=tmp_path)
    assert [r["w"] for r in rows] == [1, 2]
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
    assert (tmp_path / "sweep_w.csv").read_text().startswith("w,accuracy\n")


def _write_cfg(cfg, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def test_config_round_trip(tmp_path):
    cfg = small_config(tmp_path, pipeline=PipelineConfig(w_s=2), s_values=(1, 3))
    assert ExperimentConfig.load(_write_cfg(cfg, tmp_path)).to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_cli_flags_override_config(small_ds, tmp_path, capsys):
    cfg_path = _write_cfg(replace(small_ds, seed=99), tmp_path)
    rc = main(["enroll", "V01", "--config", str(cfg_path), "--seed", "3", "--out", str(tmp_path / "m1")])
    assert rc == 0
    cmd_enroll(small_ds, "V01", out_dir=tmp_path / "m2")
    assert (tmp_path / "m1" / "V01.model.json").read_bytes() == (tmp_path / "m2" / "V01.model.json").read_bytes()
    out = json.loads(capsys.readouterr().out)
    assert out[0]["subject"] == "V01"


def test_cli_errors_are_json(tmp_path, capsys):
    rc = main(["report", str(tmp_path / "nomodels"), "--dataset", str(tmp_path / "nodata")])
    assert rc != 0
    err = json.loads(capsys.readouterr().err)
    assert err["type"] == "DatasetError" and "error" in err
    rc = main(["synth", "--out", str(tmp_path / "x"), "--n-validation", "0"])
    assert rc != 0
    assert "error" in json.loads(capsys.readouterr().err)


def test_cli_full_cycle(tmp_path, capsys):
    ds, models, rep = tmp_path / "ds", tmp_path / "models", tmp_path / "rep"
    cfg = small_config(ds)
    cfg_path = _write_cfg(cfg, tmp_path)
    assert main(["synth", "--config", str(cfg_path), "--n-validation", "2", "--n-external", "1",
                 "--sessions", "1"]) == 0
    assert main(["enroll", "all", "--config", str(cfg_path), "--out", str(models)]) == 0
    assert main(["report", str(models), "--config", str(cfg_path), "--out", str(rep),
                 "--s-values", "1", "3"]) == 0
    assert sorted(p.name for p in rep.glob("roc_*.csv")) == ["roc_session1_s1.csv", "roc_session1_s3.csv"]
    assert main(["auth", str(models / "V01.model.json"), str(ds / "recordings" / "V02_s1_i1.json"),
                 "--claimed", "V01", "-s", "3", "--config", str(cfg_path), "--out", str(tmp_path / "a.json")]) == 0
    assert json.loads((tmp_path / "a.json").read_text())["seconds_used"] == 5
