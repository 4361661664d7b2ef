import json

import numpy as np
import pytest

from bcgauth.evolution import (
    TRAIT_NAMES,
    GaConfig,
    GaConfigError,
    ScoredGenome,
    crossover,
    evaluate_genome,
    far_frr,
    mutate,
    random_genome,
    run_ga,
    select_parents,
    write_ga_outputs,
)
from bcgauth.neuralnet import TRAIT_DOMAINS, CnnGenome, TrainSet


def opposite_genomes():
    a = CnnGenome(**{n: TRAIT_DOMAINS[n][0] for n in TRAIT_NAMES})
    b = CnnGenome(**{n: TRAIT_DOMAINS[n][-1] for n in TRAIT_NAMES})
    return a, b


def fake_evaluator(genome, seed):
    # deterministic pseudo-score from the genome alone
    t = genome.traits()
    far = (t["kernel_time"] - 3) / 10 + 0.01 * t["n_conv_layers"]
    frr = abs(np.log10(t["learning_rate"]) + 2) / 4 + t["dropout_rate"] / 5
    return ScoredGenome(genome, far, frr)


def test_default_config_counts():
    cfg = GaConfig()
    assert (cfg.population, cfg.n_elites, cfg.random_parents, cfg.children_per_gen) == (20, 5, 3, 12)


@pytest.mark.parametrize("kw", [dict(elite_fraction=0.3), dict(children_per_gen=11),
                                dict(random_parents=16, children_per_gen=-1), dict(generations=0)])
def test_bad_configs(kw):
    with pytest.raises(GaConfigError):
        GaConfig(**kw)


def test_crossover_takes_each_trait_half_the_time():
    a, b = opposite_genomes()
    rng = np.random.default_rng(0)
    from_a = np.zeros(len(TRAIT_NAMES))
    trials = 10_000
    for _ in range(trials):
        child = crossover(a, b, rng).traits()
        from_a += [child[n] == a.traits()[n] for n in TRAIT_NAMES]
    assert np.all(np.abs(from_a / trials - 0.5) <= 0.02)


def test_mutation_change_frequency():
    rng = np.random.default_rng(1)
    g = CnnGenome()
    changed = np.zeros(len(TRAIT_NAMES))
    trials = 10_000
    for _ in range(trials):
        m = mutate(g, 0.15, rng).traits()
        changed += [m[n] != g.traits()[n] for n in TRAIT_NAMES]
    expect = np.array([0.15 * (1 - 1 / len(TRAIT_DOMAINS[n])) for n in TRAIT_NAMES])
    assert np.all(np.abs(changed / trials - expect) <= 0.02)
    assert mutate(g, 0.0, rng) == g


def test_random_genomes_stay_in_domain():
    rng = np.random.default_rng(2)
    for _ in range(200):
        random_genome(rng).check_domains()


def test_select_parents_elites_and_randoms():
    cfg = GaConfig()
    rng = np.random.default_rng(3)
    pop = [fake_evaluator(random_genome(rng), 0) for _ in range(20)]
    scores = [p.score for p in pop]
    order = sorted(range(20), key=lambda i: (scores[i], i))
    for trial in range(200):
        parents = select_parents(pop, cfg, np.random.default_rng(trial))
        assert len(parents) == 8
        assert [id(p) for p in parents[:5]] == [id(pop[i]) for i in order[:5]]
        rest_ids = {id(pop[i]) for i in order[5:]}
        randoms = parents[5:]
        assert all(id(p) in rest_ids for p in randoms)
        assert len({id(p) for p in randoms}) == 3


def test_ga_population_and_monotone_best():
    cfg = GaConfig(seed=4)
    res = run_ga(cfg, evaluator=fake_evaluator)
    assert len(res.history) == cfg.generations
    assert all(len(gen) == 20 for gen in res.history)
    assert len(res.log_records) == 20 * cfg.generations
    best = res.best_so_far()
    assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
    assert res.best.score == pytest.approx(best[-1])
    later = [r for r in res.log_records if r["generation"] > 0]
    assert sum(r["cached"] for r in later) == 8 * (cfg.generations - 1)
    assert all(r["cached"] == (r["index"] < 8) for r in later)


def test_ga_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        res = run_ga(GaConfig(seed=5), evaluator=fake_evaluator)
        write_ga_outputs(res, tmp_path / f"log{k}.jsonl", tmp_path / f"best{k}.json")
        outs.append(((tmp_path / f"log{k}.jsonl").read_bytes(), (tmp_path / f"best{k}.json").read_bytes()))
    assert outs[0] == outs[1]
    lines = outs[0][0].decode().splitlines()
    assert len(lines) == 200 and json.loads(lines[0])["generation"] == 0


def test_far_frr_strict_threshold():
    far, frr = far_frr(np.array([0.5, 0.6, 0.4, 0.5]), np.array([1, 1, 0, 0]))
    assert (far, frr) == (0.0, 0.5)


def test_invalid_genome_scores_worst():
    data = TrainSet(np.zeros((4, 2, 3, 50)), np.ones((4, 2, 3, 50)))
    g = CnnGenome(n_conv_layers=3, kernel_time=11, pool_time=3)
    sg = evaluate_genome(g, data, np.zeros((2, 2, 3, 50)), np.array([1, 0]), w_s=1)
    assert (sg.far, sg.frr, sg.score) == (1.0, 1.0, 2.0)


def test_smoke_ga_with_training():
    rng = np.random.default_rng(6)
    t = np.arange(50) / 50
    pos = rng.normal(scale=0.5, size=(24, 2, 3, 50)) + np.sin(2 * np.pi * 6 * t)
    neg = rng.normal(scale=0.5, size=(24, 2, 3, 50)) + np.sin(2 * np.pi * 9 * t)
    tune_x = np.concatenate([pos[:6] + 0.1, neg[:6] - 0.1])
    tune_y = np.r_[np.ones(6), np.zeros(6)]
    cfg = GaConfig(population=4, generations=2, elite_fraction=0.25, random_parents=1,
                   children_per_gen=2, seed=7)
    res = run_ga(cfg, TrainSet(pos, neg), tune_x, tune_y, w_s=1, epochs=2)
    assert len(res.log_records) == 8
    assert 0.0 <= res.best.score <= 2.0
