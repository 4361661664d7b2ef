"""Experiment orchestration: dataset layout, enrollment, authentication, search, reports.

Dataset layout under ``dataset_root``::

    dataset.json                      subject lists + recording index
    profiles/<subject>.json           synthetic wearer parameters
    recordings/<subject>_s<session>_i<k>.json (+ _accel.csv, _gyro.csv)

Each session is a list of recording files (intervals). Segments never cross
a file boundary; segment start times are counted in seconds from the start
of the session, so the first ``enroll_minutes`` of a session are the
enrollment split and the following ``tune_minutes`` the tuning split.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bcg_pipeline as bp
from .evaluation import (
    AuthPolicy,
    Category,
    Decision,
    ScoreRecord,
    decide,
    session_report,
    write_report,
)
from .evolution import GaConfig, run_ga, write_ga_outputs
from .io_utils import atomic_write_text
from .neuralnet import DEFAULT_EPOCHS, DEFAULT_GENOME, CnnGenome, CnnModel, TrainSet, build_model, train
from .preprocess import align
from .seeds import substream, substream_seed
from .sensor_model import (
    Recording,
    population_template,
    random_profile,
    read_recording,
    synth_recording,
    write_profile,
    write_recording,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "dataset.json"


class DatasetError(ValueError):
    pass


class DurationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    session_seconds: float = 600.0
    intervals_per_session: int = 1
    individuality: float = 0.15
    noise_std: float = 1.5
    hrv_std: float = 0.05
    resp_depth: float = 0.3
    morph_var: float = 0.3


@dataclass
class ExperimentConfig:
    dataset_root: str = "dataset"
    pipeline: bp.PipelineConfig = field(default_factory=bp.PipelineConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    genome: CnnGenome = field(default_factory=lambda: DEFAULT_GENOME)
    s_values: tuple = (1, 3, 5, 7)
    sessions: tuple | None = None
    enroll_minutes: float = 8.0
    tune_minutes: float = 2.0
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0

    def __post_init__(self):
        if self.enroll_minutes <= 0 or self.tune_minutes <= 0:
            raise ValueError("enroll_minutes and tune_minutes must be positive")

    @property
    def root(self) -> Path:
        return Path(self.dataset_root)

    @property
    def enroll_seconds(self) -> int:
        return int(round(self.enroll_minutes * 60))

    @property
    def tune_seconds(self) -> int:
        return int(round(self.tune_minutes * 60))

    def to_dict(self) -> dict:
        return {
            "dataset_root": self.dataset_root,
            "pipeline": asdict(self.pipeline),
            "ga": asdict(self.ga),
            "synth": asdict(self.synth),
            "genome": self.genome.traits(),
            "s_values": list(self.s_values),
            "sessions": list(self.sessions) if self.sessions is not None else None,
            "enroll_minutes": self.enroll_minutes,
            "tune_minutes": self.tune_minutes,
            "epochs": self.epochs,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "pipeline" in kw:
            kw["pipeline"] = bp.PipelineConfig(**kw["pipeline"])
        if "ga" in kw:
            kw["ga"] = GaConfig(**kw["ga"])
        if "synth" in kw:
            kw["synth"] = SynthConfig(**kw["synth"])
        if "genome" in kw:
            kw["genome"] = CnnGenome.from_dict(kw["genome"])
        if "s_values" in kw:
            kw["s_values"] = tuple(kw["s_values"])
        if kw.get("sessions") is not None:
            kw["sessions"] = tuple(str(s) for s in kw["sessions"])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---- dataset manifest -------------------------------------------------------

@dataclass
class DatasetManifest:
    validation_subjects: list[str]
    external_subjects: list[str]
    recordings: dict[str, dict[str, list[str]]]  # subject -> session -> manifest paths

    def __post_init__(self):
        overlap = set(self.validation_subjects) & set(self.external_subjects)
        if overlap:
            raise DatasetError(f"subjects in both validation and external sets: {sorted(overlap)}")
        for s in self.validation_subjects + self.external_subjects:
            if s not in self.recordings:
                raise DatasetError(f"subject {s} has no recordings listed")

    def sessions_of(self, subject: str) -> list[str]:
        return sorted(self.recordings[subject], key=_session_key)

    def all_sessions(self) -> list[str]:
        return sorted({s for subj in self.recordings.values() for s in subj}, key=_session_key)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, root: str | Path) -> "DatasetManifest":
        path = Path(root) / MANIFEST_NAME
        if not path.exists():
            raise DatasetError(f"no dataset manifest at {path}")
        d = json.loads(path.read_text())
        return cls(d["validation_subjects"], d["external_subjects"], d["recordings"])


def _session_key(s: str):
    return (0, int(s)) if s.isdigit() else (1, s)


@dataclass
class SessionTensors:
    """All BCG tensors of one subject-session, with start seconds in the session."""

    tensors: np.ndarray  # (N, 2, 3, w*50)
    start_s: np.ndarray  # (N,)

    def window(self, lo_s: float, hi_s: float, w_s: int) -> "SessionTensors":
        """Segments lying entirely inside ``[lo_s, hi_s)``."""
        m = (self.start_s >= lo_s) & (self.start_s + w_s <= hi_s)
        return SessionTensors(self.tensors[m], self.start_s[m])

    def __len__(self) -> int:
        return len(self.start_s)


class Dataset:
    """Reads recordings and caches their BCG tensors per (subject, session)."""

    def __init__(self, root: str | Path, cfg: bp.PipelineConfig):
        self.root = Path(root)
        self.manifest = DatasetManifest.load(self.root)
        self.cfg = cfg
        self.filt = bp.design_bandpass(cfg)
        self._cache: dict[tuple[str, str], SessionTensors] = {}

    def session(self, subject: str, session: str) -> SessionTensors:
        key = (subject, session)
        if key not in self._cache:
            try:
                paths = self.manifest.recordings[subject][session]
            except KeyError:
                raise DatasetError(f"no recordings for subject {subject} session {session}") from None
            chunks, starts = [], []
            offset = 0
            for rel in paths:
                pair = align(read_recording(self.root / rel))
                t = bp.pair_to_tensors(pair, self.cfg, self.filt)
                chunks.append(t)
                starts.append(offset + np.arange(len(t)))
                offset += len(pair) // self.cfg.rate_hz
            self._cache[key] = SessionTensors(np.concatenate(chunks), np.concatenate(starts))
        return self._cache[key]

    def enroll_split(self, subject: str, session: str, config: ExperimentConfig) -> SessionTensors:
        return self.session(subject, session).window(0, config.enroll_seconds, self.cfg.w_s)

    def tune_split(self, subject: str, session: str, config: ExperimentConfig) -> SessionTensors:
        lo = config.enroll_seconds
        return self.session(subject, session).window(lo, lo + config.tune_seconds, self.cfg.w_s)


def first_session(manifest: DatasetManifest, subject: str) -> str:
    return manifest.sessions_of(subject)[0]


def _check_hygiene(train_part: SessionTensors, tune_part: SessionTensors, w_s: int) -> None:
    if len(train_part) and len(tune_part):
        if train_part.start_s.max() + w_s > tune_part.start_s.min():
            raise AssertionError("tuning segments overlap the enrollment window")


def build_trainset(ds: Dataset, subject: str, config: ExperimentConfig) -> TrainSet:
    """Enrollment split of ``subject`` against those of every other validation subject."""
    man = ds.manifest
    if subject not in man.validation_subjects:
        raise DatasetError(f"{subject} is not a validation subject")
    pos = ds.enroll_split(subject, first_session(man, subject), config)
    _check_hygiene(pos, ds.tune_split(subject, first_session(man, subject), config), ds.cfg.w_s)
    negs = [
        ds.enroll_split(o, first_session(man, o), config).tensors
        for o in man.validation_subjects
        if o != subject
    ]
    if len(pos) == 0 or not negs:
        raise DatasetError(f"not enough enrollment data for {subject}")
    return TrainSet(pos.tensors, np.concatenate(negs))


def build_tuneset(ds: Dataset, subject: str, config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    man = ds.manifest
    pos = ds.tune_split(subject, first_session(man, subject), config).tensors
    negs = [ds.tune_split(o, first_session(man, o), config).tensors
            for o in man.validation_subjects if o != subject]
    x = np.concatenate([pos] + negs)
    y = np.concatenate([np.ones(len(pos)), np.zeros(sum(len(n) for n in negs))])
    return x, y


# ---- commands -----------------------------------------------------------------

def cmd_synth(config: ExperimentConfig, n_validation: int = 12, n_external: int = 10,
              sessions: int = 3, force: bool = False) -> DatasetManifest:
    """Write a synthetic dataset of validation and external wearers.

    Validation subjects get ``sessions`` sessions; external subjects one.
    """
    if min(n_validation, n_external, sessions) < 1:
        raise ValueError("subject and session counts must be at least 1")
    root = config.root
    if root.exists() and any(root.iterdir()) and not force:
        raise DatasetError(f"{root} exists and is not empty (use --force to overwrite)")
    root.mkdir(parents=True, exist_ok=True)
    sc = config.synth
    template = population_template(substream(config.seed, "synth", "template"))
    val = [f"V{i + 1:02d}" for i in range(n_validation)]
    ext = [f"E{i + 1:02d}" for i in range(n_external)]
    index: dict[str, dict[str, list[str]]] = {}
    interval_s = sc.session_seconds / sc.intervals_per_session
    for subj in val + ext:
        profile = random_profile(
            substream(config.seed, "synth", "profile", subj), template,
            individuality=sc.individuality, noise_std=sc.noise_std, hrv_std=sc.hrv_std,
            resp_depth=sc.resp_depth, morph_var=sc.morph_var,
        )
        write_profile(profile, root / "profiles" / f"{subj}.json")
        n_sess = sessions if subj in val else 1
        index[subj] = {}
        for sess in range(1, n_sess + 1):
            paths = []
            for k in range(sc.intervals_per_session):
                rec = synth_recording(
                    profile, interval_s, seed=substream_seed(config.seed, "synth", "rec", subj, sess, k),
                    subject_id=subj, session_id=str(sess),
                )
                rel = f"recordings/{subj}_s{sess}_i{k + 1}.json"
                write_recording(rec, root / rel)
                paths.append(rel)
            index[subj][str(sess)] = paths
    man = DatasetManifest(val, ext, index)
    atomic_write_text(root / MANIFEST_NAME, json.dumps(man.to_dict(), indent=2, sort_keys=True) + "\n")
    return man


@dataclass
class EnrollResult:
    model: CnnModel
    report: dict
    model_path: Path | None


def cmd_enroll(config: ExperimentConfig, subject: str, genome: CnnGenome | None = None,
               out_dir: str | Path | None = None, dataset: Dataset | None = None) -> EnrollResult:
    """Train ``subject``'s verifier on the enrollment split and save it."""
    ds = dataset or Dataset(config.root, config.pipeline)
    genome = genome or config.genome
    data = build_trainset(ds, subject, config)
    model = build_model(genome, config.pipeline.w_s, seed=substream_seed(config.seed, "init", subject))
    rep = train(model, data, seed=substream_seed(config.seed, "shuffle", subject), epochs=config.epochs)
    report = {
        "subject": subject,
        "n_positive": int(len(data.positives)),
        "n_negative": int(len(data.negatives)),
        "epochs_run": rep.epochs_run,
        "loss_curve": rep.loss_curve,
        "final_loss": rep.final_loss,
        "train_accuracy": rep.train_accuracy,
        "seed": rep.seed,
        "genome": genome.traits(),
    }
    path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        path = out_dir / f"{subject}.model.json"
        model.save(path)
        atomic_write_text(out_dir / f"{subject}.train.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EnrollResult(model, report, path)


def cmd_auth(config: ExperimentConfig, model: CnnModel | str | Path, recording: Recording | str | Path,
             claimed: str, threshold: float, s: int) -> dict:
    """Score the first ``s`` segments of ``recording`` and apply the any-accept rule."""
    if not isinstance(model, CnnModel):
        model = CnnModel.load(model)
    if not isinstance(recording, Recording):
        recording = read_recording(recording)
    policy = AuthPolicy(threshold, s, model.w_s)
    cfg = replace(config.pipeline, w_s=model.w_s)
    pair = align(recording)
    have = len(pair) // cfg.rate_hz
    if have < policy.required_seconds:
        raise DurationError(
            f"recording holds {have} s of aligned data; s={s} attempts with w={model.w_s} "
            f"need s + w - 1 = {policy.required_seconds} s"
        )
    seg = bp.segment_array(pair.stacked()[:, : policy.required_seconds * cfg.rate_hz], cfg)
    bcg, _ = bp.derive_bcg_array(seg, bp.design_bandpass(cfg), cfg)
    conf = model.predict(bp.to_tensor(bcg)).tolist()
    outcome = decide(conf, policy)
    return {
        "claimed_subject": claimed,
        "decision": outcome.value,
        "threshold": threshold,
        "s": s,
        "w_s": model.w_s,
        "seconds_used": policy.required_seconds,
        "confidences": conf,
    }


def cmd_ga(config: ExperimentConfig, subject: str, out_dir: str | Path | None = None,
           dataset: Dataset | None = None):
    """Genome search on ``subject``'s first-session enrollment/tuning split."""
    ds = dataset or Dataset(config.root, config.pipeline)
    data = build_trainset(ds, subject, config)
    tx, ty = build_tuneset(ds, subject, config)
    ga_cfg = replace(config.ga, seed=substream_seed(config.seed, "ga", subject))
    result = run_ga(ga_cfg, data, tx, ty, w_s=config.pipeline.w_s, epochs=config.epochs)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_ga_outputs(result, out_dir / f"{subject}.ga_log.jsonl", out_dir / f"{subject}.best_genome.json")
    return result


def cmd_sweep_w(config: ExperimentConfig, w_values: Sequence[int] = (1, 2, 3, 4, 5),
                subjects: Sequence[str] | None = None, out_dir: str | Path | None = None) -> list[dict]:
    """Mean tuning-split accuracy (T = 0.5, s = 1) for each segment length."""
    rows = []
    man = DatasetManifest.load(config.root)
    subjects = list(subjects) if subjects else man.validation_subjects
    for w in w_values:
        cfg_w = replace(config, pipeline=replace(config.pipeline, w_s=int(w)))
        ds = Dataset(config.root, cfg_w.pipeline)
        accs = []
        for subj in subjects:
            res = cmd_enroll(cfg_w, subj, dataset=ds)
            tx, ty = build_tuneset(ds, subj, cfg_w)
            conf = res.model.predict(tx)
            acc = conf > 0.5
            tar = float(np.mean(acc[ty == 1]))
            trr = float(np.mean(~acc[ty == 0]))
            accs.append((tar + trr) / 2.0)
        rows.append({"w": int(w), "accuracy": float(np.mean(accs)), "per_subject": accs})
    if out_dir is not None:
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / "sweep_w.json", json.dumps({"rows": rows}, indent=2, sort_keys=True) + "\n")
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["w", "accuracy"])
        for r in rows:
            wr.writerow([r["w"], repr(r["accuracy"])])
        atomic_write_text(out_dir / "sweep_w.csv", buf.getvalue())
    return rows


def score_records(ds: Dataset, models: dict[str, CnnModel], config: ExperimentConfig,
                  sessions: Sequence[str] | None = None) -> list[ScoreRecord]:
    """Score every evaluation segment with every model.

    Per model and report session: the model's own subject and the other
    validation subjects contribute unseen segments (first session: tuning
    split only; later sessions: everything), and external subjects
    contribute all of their segments, tagged with the report session.
    """
    man = ds.manifest
    sessions = list(sessions) if sessions is not None else man.all_sessions()

    def eval_part(subj: str, sess: str) -> SessionTensors | None:
        if sess not in man.recordings[subj]:
            return None
        if sess == first_session(man, subj):
            return ds.tune_split(subj, sess, config)
        return ds.session(subj, sess)

    records: list[ScoreRecord] = []
    for claimed in sorted(models):
        model = models[claimed]
        for sess in sessions:
            for true in man.validation_subjects:
                part = eval_part(true, sess)
                if part is None or len(part) == 0:
                    continue
                cat = Category.VALIDATION_POSITIVE if true == claimed else Category.VALIDATION_NEGATIVE
                conf = model.predict(part.tensors)
                records.extend(
                    ScoreRecord(claimed, true, sess, int(i), float(c), cat)
                    for i, c in zip(part.start_s.tolist(), conf.tolist())
                )
            for true in man.external_subjects:
                for k, esess in enumerate(man.sessions_of(true)):
                    part = ds.session(true, esess)
                    conf = model.predict(part.tensors)
                    # index offset keeps streams from different external sessions apart
                    offset = k * 1_000_000
                    records.extend(
                        ScoreRecord(claimed, true, sess, offset + int(i), float(c), Category.NEGATIVE_EXTERNAL)
                        for i, c in zip(part.start_s.tolist(), conf.tolist())
                    )
    return records


def write_scores_csv(records: Sequence[ScoreRecord], path: str | Path) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["claimed_subject", "true_subject", "session_id", "segment_index", "confidence", "category"])
    for r in records:
        wr.writerow([r.claimed_subject, r.true_subject, r.session_id, r.segment_index, repr(r.confidence),
                     r.category.value])
    atomic_write_text(path, buf.getvalue())


def load_models(models_dir: str | Path) -> dict[str, CnnModel]:
    models = {}
    for p in sorted(Path(models_dir).glob("*.model.json")):
        models[p.name[: -len(".model.json")]] = CnnModel.load(p)
    if not models:
        raise DatasetError(f"no *.model.json files in {models_dir}")
    return models


def cmd_report(config: ExperimentConfig, models: dict[str, CnnModel] | str | Path,
               out_dir: str | Path | None = None, dataset: Dataset | None = None):
    """Session x s metric grid, ROC CSVs, pooled and per-subject EERs."""
    if not isinstance(models, dict):
        models = load_models(models)
    ds = dataset or Dataset(config.root, config.pipeline)
    man = ds.manifest
    stray = set(models) - set(man.validation_subjects)
    if stray:
        raise DatasetError(f"models for subjects outside the validation set: {sorted(stray)}")
    sessions = list(config.sessions) if config.sessions is not None else man.all_sessions()
    records = score_records(ds, models, config, sessions)
    reports = session_report(records, sessions, config.s_values)
    if out_dir is not None:
        write_report(reports, out_dir)
        write_scores_csv(records, Path(out_dir) / "scores.csv")
    return reports, records


def enroll_all(config: ExperimentConfig, out_dir: str | Path | None = None,
               dataset: Dataset | None = None) -> dict[str, CnnModel]:
    ds = dataset or Dataset(config.root, config.pipeline)
    models = {}
    for subj in ds.manifest.validation_subjects:
        models[subj] = cmd_enroll(config, subj, out_dir=out_dir, dataset=ds).model
        log.info("enrolled %s", subj)
    return models


def dump_json(obj) -> str:
    def default(o):
        if isinstance(o, float) and math.isnan(o):
            return None
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o)}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default)


__all__ = [
    "Decision",
    "ExperimentConfig",
    "SynthConfig",
    "DatasetManifest",
    "Dataset",
    "cmd_synth",
    "cmd_enroll",
    "cmd_auth",
    "cmd_ga",
    "cmd_sweep_w",
    "cmd_report",
    "enroll_all",
]
