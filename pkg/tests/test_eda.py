import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edabnsl.bayesnet import asia_fixture, forward_sample, is_acyclic, matrix_from_arcs
from edabnsl.eda import (
    ConfigError,
    EdaConfig,
    Individual,
    MimicChain,
    estimate_mimic_chain,
    estimate_univariate,
    init_population,
    pbil_update,
    repair_acyclic,
    run_eda,
    sample_model,
    sample_offspring,
    select,
    site_rng,
)
from edabnsl.mutation import offdiag_indices
from edabnsl.scoring import BDeScorer

from oracles import chain_network, has_cycle_by_powers


def ind(m, fitness=None):
    return Individual(np.asarray(m, dtype=np.uint8), fitness)


@st.composite
def genome_sets(draw, n=4, max_h=6):
    h = draw(st.integers(1, max_h))
    out = []
    for _ in range(h):
        bits = draw(st.lists(st.integers(0, 1), min_size=n * n, max_size=n * n))
        m = np.array(bits, dtype=np.uint8).reshape(n, n)
        np.fill_diagonal(m, 0)
        out.append(m)
    return out


class TestInitPopulation:
    def test_all_acyclic(self):
        pop = init_population(10, 8, seed=1)
        assert len(pop) == 10
        assert all(is_acyclic(p.genome) for p in pop)

    def test_p0_zero(self):
        assert all(not p.genome.any() for p in init_population(6, 5, seed=2, p0=0.0))

    def test_deterministic(self):
        a = init_population(10, 8, seed=3)
        b = init_population(10, 8, seed=3)
        assert all(np.array_equal(x.genome, y.genome) for x, y in zip(a, b))

    def test_dense_start_still_acyclic(self):
        assert all(is_acyclic(p.genome) for p in init_population(20, 8, seed=4, p0=1.0))


class TestSelect:
    def test_top_h(self):
        pop = [ind(np.zeros((2, 2)), f) for f in (-5.0, -1.0, -3.0)]
        assert select(pop, 2) == [pop[1], pop[2]]

    def test_whole_population(self):
        pop = [ind(np.zeros((2, 2)), f) for f in (-5.0, -1.0, -3.0)]
        assert {id(p) for p in select(pop, 3)} == {id(p) for p in pop}

    def test_ties_by_index(self):
        pop = [ind(np.zeros((2, 2)), -2.0) for _ in range(5)]
        assert select(pop, 3) == pop[:3]

    def test_needs_fitness(self):
        with pytest.raises(ValueError):
            select([ind(np.zeros((2, 2)))], 1)


class TestUnivariate:
    def test_single_genome(self):
        m = matrix_from_arcs(3, [(0, 1), (2, 1)])
        np.testing.assert_array_equal(estimate_univariate([ind(m)]), m)

    def test_opposite_arcs_average(self):
        p = estimate_univariate([ind(matrix_from_arcs(2, [(0, 1)])), ind(matrix_from_arcs(2, [(1, 0)]))])
        assert p.tolist() == [[0.0, 0.5], [0.5, 0.0]]

    def test_identical_genomes(self):
        m = matrix_from_arcs(4, [(0, 3), (1, 2)])
        np.testing.assert_array_equal(estimate_univariate([ind(m)] * 5), m)

    @settings(max_examples=100, deadline=None)
    @given(genome_sets())
    def test_exact_rational_means(self, genomes):
        p = estimate_univariate([ind(g) for g in genomes])
        h = len(genomes)
        for i, j in itertools.product(range(4), repeat=2):
            exact = Fraction(sum(int(g[i, j]) for g in genomes), h)
            assert p[i, j] == float(exact)
            assert 0.0 <= p[i, j] <= 1.0
        assert not p.diagonal().any()


class TestPbil:
    def test_rate_one(self):
        prev = np.array([[0, 0.3], [0.9, 0]])
        sel = np.array([[0, 0.7], [0.1, 0]])
        np.testing.assert_array_equal(pbil_update(prev, sel, 1.0), sel)

    @pytest.mark.parametrize("a", [0.1, 0.5, 0.9])
    def test_fixed_point(self, a):
        prev = np.array([[0, 0.3], [0.9, 0]])
        np.testing.assert_array_equal(pbil_update(prev, prev.copy(), a), prev)

    def test_arithmetic(self):
        out = pbil_update(np.array([[0, 0.2], [0, 0]]), np.array([[0, 0.8], [0, 0]]), 0.5)
        assert out[0, 1] == pytest.approx(0.5, abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=9, max_size=9),
        st.lists(st.floats(0, 1), min_size=9, max_size=9),
        st.floats(0.01, 1.0),
    )
    def test_contraction(self, prev, sel, a):
        prev = np.array(prev).reshape(3, 3)
        sel = np.array(sel).reshape(3, 3)
        np.fill_diagonal(prev, 0)
        np.fill_diagonal(sel, 0)
        out = pbil_update(prev, sel, a)
        np.testing.assert_allclose(np.abs(out - sel), (1 - a) * np.abs(prev - sel), atol=1e-12)
        assert ((out >= 0) & (out <= 1)).all()
        assert not out.diagonal().any()

    def test_rejects_rate(self):
        with pytest.raises(ValueError):
            pbil_update(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


class TestMimic:
    def test_identical_genomes_smoothed_certainty(self):
        m = matrix_from_arcs(3, [(0, 1), (2, 1)])
        h = 4
        chain = estimate_mimic_chain([ind(m)] * h)
        allowed = {1 / (h + 2), (h + 1) / (h + 2)}
        values = [chain.head_p] + chain.cond[1:].ravel().tolist()
        for v in values:
            assert min(abs(v - a) for a in allowed) < 1e-15

    def test_constant_position_heads_before_uniform(self):
        n = 3
        rows, cols = offdiag_indices(n)
        # position b = 4 always 1; position c = 0 split evenly; everything else uniform too
        genomes = []
        for k in range(8):
            g = np.zeros((n, n), dtype=np.uint8)
            bits = [(k >> t) & 1 for t in range(3)]
            g[rows[0], cols[0]] = bits[0]
            g[rows[1], cols[1]] = bits[1]
            g[rows[2], cols[2]] = bits[2]
            g[rows[3], cols[3]] = bits[0] ^ bits[1]
            g[rows[4], cols[4]] = 1
            g[rows[5], cols[5]] = bits[1] ^ bits[2]
            genomes.append(ind(g))
        chain = estimate_mimic_chain(genomes)
        assert chain.order[0] == 4
        assert list(chain.order).index(4) < list(chain.order).index(0)

    @settings(max_examples=50, deadline=None)
    @given(genome_sets(n=4))
    def test_permutation_covers_positions(self, genomes):
        chain = estimate_mimic_chain([ind(g) for g in genomes])
        assert sorted(chain.order.tolist()) == list(range(12))
        assert 0 <= chain.head_p <= 1
        assert ((chain.cond >= 0) & (chain.cond <= 1)).all()

    def test_ties_to_lower_index(self):
        # all positions identical statistics: chain is the identity order
        chain = estimate_mimic_chain([ind(np.zeros((3, 3)))] * 3)
        assert chain.order.tolist() == list(range(6))

    def test_modal_genome_probability(self):
        n, h = 3, 2
        modal = matrix_from_arcs(n, [(0, 1), (0, 2)])
        chain = estimate_mimic_chain([ind(modal)] * h)
        draws = sample_model(chain, np.random.default_rng(77), size=20_000)
        hit = (draws == modal).all(axis=(1, 2)).mean()
        expected = ((h + 1) / (h + 2)) ** (n * n - n)
        se = np.sqrt(expected * (1 - expected) / 20_000)
        assert abs(hit - expected) < 4 * se

    def test_dependency_is_captured(self):
        # two arc positions that are always equal: sampled pairs stay mostly equal
        n = 3
        rows, cols = offdiag_indices(n)
        rng = np.random.default_rng(5)
        genomes = []
        for _ in range(40):
            g = np.zeros((n, n), dtype=np.uint8)
            b = rng.integers(0, 2)
            g[rows[0], cols[0]] = b
            g[rows[5], cols[5]] = b
            genomes.append(ind(g))
        chain = estimate_mimic_chain(genomes)
        draws = sample_model(chain, rng, size=5000)
        same = (draws[:, rows[0], cols[0]] == draws[:, rows[5], cols[5]]).mean()
        assert same > 0.9


class TestSampling:
    def test_zero_matrix_gives_empty(self):
        for seed in range(20):
            assert not sample_offspring(np.zeros((5, 5)), seed).any()

    def test_single_certain_arc(self):
        p = np.zeros((4, 4))
        p[0, 1] = 1.0
        for seed in range(20):
            np.testing.assert_array_equal(sample_offspring(p, seed), matrix_from_arcs(4, [(0, 1)]))

    def test_half_density(self):
        p = np.full((8, 8), 0.5)
        np.fill_diagonal(p, 0)
        draws = sample_model(p, np.random.default_rng(2), size=10_000)
        density = draws.sum(axis=(1, 2)).mean() / 56
        assert abs(density - 0.5) <= 0.02

    def test_binary_matrix_deterministic(self):
        p = matrix_from_arcs(5, [(0, 1), (1, 0), (3, 4)]).astype(float)
        for seed in range(10):
            np.testing.assert_array_equal(sample_model(p, seed), p.astype(np.uint8))

    def test_offspring_always_acyclic(self):
        p = np.full((6, 6), 0.7)
        np.fill_diagonal(p, 0)
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert not has_cycle_by_powers(sample_offspring(p, rng))

    def test_row_major_draws(self):
        p = np.full((3, 3), 0.5)
        np.fill_diagonal(p, 0)
        u = np.random.default_rng(4).random(6)
        out = sample_model(p, 4)
        rows, cols = offdiag_indices(3)
        np.testing.assert_array_equal(out[rows, cols], (0.5 > u).astype(np.uint8))


class TestRepair:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
    def test_acyclic_input_unchanged(self, n, dag_seed, seed):
        rng = np.random.default_rng(dag_seed)
        perm = rng.permutation(n)
        m = np.triu((rng.random((n, n)) < 0.5).astype(np.uint8), 1)[np.ix_(perm, perm)]
        assert is_acyclic(m)
        np.testing.assert_array_equal(repair_acyclic(m, seed), m)

    def test_two_cycle(self):
        m = matrix_from_arcs(2, [(0, 1), (1, 0)])
        outcomes = {tuple(repair_acyclic(m, s).ravel()) for s in range(50)}
        assert outcomes == {(0, 1, 0, 0), (0, 0, 1, 0)}

    def test_three_cycle(self):
        arcs = [(0, 1), (1, 2), (2, 0)]
        m = matrix_from_arcs(3, arcs)
        # oracle: every 2-arc subset is a DAG and is a possible outcome
        subsets = {frozenset(c) for c in itertools.combinations(arcs, 2)}
        assert all(not has_cycle_by_powers(matrix_from_arcs(3, s)) for s in subsets)
        outcomes = set()
        for s in range(100):
            out = repair_acyclic(m, s)
            outcomes.add(frozenset(zip(*map(lambda a: a.tolist(), np.nonzero(out)))))
        assert outcomes == subsets

    def test_deterministic_and_subset(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            m = (rng.random((7, 7)) < 0.4).astype(np.uint8)
            np.fill_diagonal(m, 0)
            a = repair_acyclic(m, 5)
            np.testing.assert_array_equal(a, repair_acyclic(m, 5))
            assert (a <= m).all()
            assert not has_cycle_by_powers(a)

    def test_maximal(self):
        # no dropped arc could be put back without a cycle
        rng = np.random.default_rng(13)
        for _ in range(100):
            m = (rng.random((6, 6)) < 0.5).astype(np.uint8)
            np.fill_diagonal(m, 0)
            out = repair_acyclic(m, rng)
            for i, j in zip(*np.nonzero(m & ~out)):
                trial = out.copy()
                trial[i, j] = 1
                assert has_cycle_by_powers(trial)


@pytest.fixture(scope="module")
def chain_data():
    return forward_sample(chain_network(0.9), 1000, seed=17)


class TestRunEda:
    def test_all_elite_keeps_population(self, chain_data):
        cfg = EdaConfig("univariate", d=8, h=8, generations=1, mutation="none", elitism=8, seed=5)
        res = run_eda(cfg, chain_data)
        initial = init_population(8, 3, site_rng(5, 0, "init"))
        assert [p.genome.tolist() for p in res.final_population] == [p.genome.tolist() for p in initial]

    @pytest.mark.parametrize("algorithm", ["univariate", "pbil", "mimic"])
    @pytest.mark.parametrize("mutation", ["none", "bitwise", "transpose"])
    def test_elitism_trace_non_decreasing(self, chain_data, algorithm, mutation):
        cfg = EdaConfig(algorithm, d=12, generations=15, mutation=mutation, rate=0.2, elitism=1, seed=3)
        res = run_eda(cfg, chain_data)
        assert len(res.best_per_generation) == 15
        assert all(b >= a for a, b in zip(res.best_per_generation, res.best_per_generation[1:]))
        assert all(is_acyclic(p.genome) for p in res.final_population)
        assert len(res.final_population) == 12

    @pytest.mark.parametrize("algorithm", ["univariate", "pbil", "mimic"])
    def test_bit_reproducible(self, algorithm):
        data = forward_sample(asia_fixture(), 500, seed=1)
        cfg = EdaConfig(algorithm, d=10, generations=10, mutation="transpose", rate=0.1, seed=99)
        a, b = run_eda(cfg, data), run_eda(cfg, data, BDeScorer(data))
        assert a.best_per_generation == b.best_per_generation
        np.testing.assert_array_equal(a.best.genome, b.best.genome)

    def test_no_elitism_runs(self, chain_data):
        res = run_eda(EdaConfig("pbil", d=10, generations=5, elitism=0, seed=1), chain_data)
        assert res.evaluations == 10 * 6
        assert res.best.fitness >= max(res.best_per_generation)

    def test_custom_fitness(self):
        target = matrix_from_arcs(4, [(0, 1), (1, 2), (2, 3)])
        res = run_eda(
            EdaConfig("univariate", d=30, generations=30, seed=2),
            fitness=lambda m: -float(np.abs(m.astype(int) - target).sum()),
            n=4,
        )
        assert res.best.fitness == 0.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(d=0),
            dict(d=10, h=11),
            dict(d=10, h=0),
            dict(rate=1.5),
            dict(pbil_rate=0.0),
            dict(elitism=-1),
            dict(d=5, elitism=6),
            dict(algorithm="boa"),
            dict(mutation="guided"),
            dict(generations=-1),
        ],
    )
    def test_config_errors(self, kwargs):
        with pytest.raises(ConfigError):
            EdaConfig(**kwargs)

    def test_default_selection_size(self):
        assert EdaConfig(d=51).h == 25
        assert EdaConfig(d=1).h == 1
        assert EdaConfig(algorithm="umda").algorithm == "univariate"

    def test_mimic_chain_type(self, chain_data):
        chain = estimate_mimic_chain(init_population(6, 3, 0))
        assert isinstance(chain, MimicChain) and chain.n == 3
