"""A miniature genetic search over network genomes.

The population is tiny and each candidate trains for two epochs, so the
scores are noisy; the point is to watch the mechanics: elites are kept
with their cached scores and children mix traits of two parents.
"""

import tempfile
from pathlib import Path

from bcgauth.evolution import GaConfig
from bcgauth.harness import ExperimentConfig, SynthConfig, cmd_ga, cmd_synth

tmp = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(
    dataset_root=str(tmp / "data"),
    synth=SynthConfig(session_seconds=60.0),
    enroll_minutes=0.75,
    tune_minutes=0.25,
    epochs=2,
    ga=GaConfig(population=8, generations=3, elite_fraction=0.25, random_parents=2, children_per_gen=4),
    seed=3,
)
cmd_synth(cfg, n_validation=3, n_external=1, sessions=1)
res = cmd_ga(cfg, "V01", out_dir=tmp / "ga")

for gen, scores in enumerate(res.history):
    print(f"generation {gen}: " + " ".join(f"{s:.2f}" for s in scores))
print("best so far:", [round(b, 3) for b in res.best_so_far()])
print("winner:", res.best.genome.traits())
print(f"winner FAR {res.best.far:.3f}, FRR {res.best.frr:.3f}")
