"""How scoring several overlapped segments changes the error trade-off.

Each verifier scores every held-out segment; a claim is accepted if any
of ``s`` consecutive segments beats the threshold. Larger ``s`` trades a
lower false rejection rate for a higher false acceptance rate at a fixed
threshold, and the report picks the threshold at the equal error point.
"""

import tempfile
from pathlib import Path

from bcgauth.harness import Dataset, ExperimentConfig, SynthConfig, cmd_report, cmd_synth, enroll_all
from bcgauth.neuralnet import CnnGenome

tmp = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(
    dataset_root=str(tmp / "data"),
    synth=SynthConfig(session_seconds=100.0),
    genome=CnnGenome(filters_per_layer=8, dense_units=32),
    enroll_minutes=1.0,
    tune_minutes=2 / 3,
    epochs=10,
    s_values=(1, 3, 5, 7),
    seed=2,
)
cmd_synth(cfg, n_validation=4, n_external=3, sessions=2)
ds = Dataset(cfg.root, cfg.pipeline)
models = enroll_all(cfg, dataset=ds)
reports, records = cmd_report(cfg, models, out_dir=tmp / "report", dataset=ds)
print(f"{len(records)} scored segments")
print("session  s   EER    AUC    TAR    FAR")
for r in reports:
    print(f"{r.session_id:>7} {r.s:2d}  {r.eer:.3f}  {r.auc:.3f}  {r.tar:.3f}  {r.far:.3f}")
print("ROC points written to", tmp / "report")
