"""Enroll a few synthetic wearers and check who each verifier accepts.

Uses a small dataset (4 wearers, 90 s each) and a short training run so
it finishes in well under a minute. The full-scale protocol lives in
tests/test_acceptance.py.
"""

import tempfile
from pathlib import Path

import numpy as np

from bcgauth.harness import (
    Dataset,
    ExperimentConfig,
    SynthConfig,
    build_tuneset,
    cmd_auth,
    cmd_enroll,
    cmd_synth,
)
from bcgauth.neuralnet import CnnGenome

tmp = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(
    dataset_root=str(tmp / "data"),
    synth=SynthConfig(session_seconds=90.0),
    genome=CnnGenome(filters_per_layer=8, dense_units=32),
    enroll_minutes=1.0,
    tune_minutes=0.5,
    epochs=15,
    seed=1,
)
man = cmd_synth(cfg, n_validation=4, n_external=2, sessions=2)
print("validation:", man.validation_subjects, "external:", man.external_subjects)

ds = Dataset(cfg.root, cfg.pipeline)
res = cmd_enroll(cfg, "V01", out_dir=tmp / "models", dataset=ds)
print(f"V01 trained on {res.report['n_positive']} own and {res.report['n_negative']} other segments, "
      f"final loss {res.report['final_loss']:.3f}")

# held-out tuning minutes: the model never saw these segments
x, y = build_tuneset(ds, "V01", cfg)
conf = res.model.predict(x)
print(f"mean confidence on V01 tune data {conf[y == 1].mean():.2f}, on others {conf[y == 0].mean():.2f}")

# authentication replays on second-session recordings
for who in ("V01", "V02", "V03"):
    out = cmd_auth(cfg, res.model_path, cfg.root / "recordings" / f"{who}_s2_i1.json", "V01", 0.5, 3)
    trace = ", ".join(f"{c:.2f}" for c in out["confidences"])
    print(f"claim V01, wearer {who}: {out['decision']:6s} [{trace}]")
