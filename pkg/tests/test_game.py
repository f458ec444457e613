import numpy as np
import pytest

from fedcoal.affinity import AffinityGraph, BenefitTable, all_coalitions, build_benefit_table, random_table
from fedcoal.game import (
    K_ORACLE_MAX,
    bell_number,
    brute_force_equilibria,
    dynamic_evolution,
    enumerate_partitions,
    grand_partition,
    is_equilibrium,
    is_profitable_transition,
    make_partition,
    make_state,
    merge_blocking,
    singleton_partition,
)

from conftest import random_snapshot

BELL = [1, 2, 5, 15, 52, 203]


def constant_table(k: int, value: float) -> BenefitTable:
    """Every multi-client coalition pays `value` to each member."""
    entries = {}
    for coal in all_coalitions(range(k)):
        entries[coal] = {m: (0.0 if len(coal) == 1 else value) for m in coal}
    return BenefitTable(entries=entries, clients=tuple(range(k)))


def grand_dominant_table(k: int) -> BenefitTable:
    """Grand coalition strictly best for everyone; other groups mediocre."""
    entries = {}
    grand = tuple(range(k))
    for coal in all_coalitions(range(k)):
        if len(coal) == 1:
            u = 0.0
        elif coal == grand:
            u = 1.0
        else:
            u = 0.5
        entries[coal] = {m: u for m in coal}
    return BenefitTable(entries=entries, clients=grand)


def narrative_table() -> BenefitTable:
    """Three clients where {0,1} is profitable from singletons but client 1
    later defects to the better pair {1,2}, which ends up in the equilibrium."""
    values = {
        (0,): {0: 0.0},
        (1,): {1: 0.0},
        (2,): {2: 0.0},
        (0, 1): {0: 0.4, 1: 0.4},
        (0, 2): {0: 0.3, 2: 0.3},
        (1, 2): {1: 0.9, 2: 0.9},
        (0, 1, 2): {0: 0.35, 1: 0.6, 2: 0.55},
    }
    return BenefitTable(entries=values, clients=(0, 1, 2))


def naive_is_equilibrium(state, table):
    """Definition-level blocking scan, written independently of the engine."""
    for members, gains in table.entries.items():
        all_ge = True
        any_gt = False
        for m in members:
            if gains[m] <= state.benefits[m] - 1e-12:
                all_ge = False
            if gains[m] > state.benefits[m]:
                any_gt = True
        if all_ge and any_gt:
            return False
    return True


class TestPartitions:
    def test_bell_numbers(self):
        assert [bell_number(n) for n in range(1, 7)] == BELL

    def test_enumeration_counts(self):
        for n, expected in enumerate(BELL, start=1):
            assert len(enumerate_partitions(n)) == expected

    def test_enumeration_distinct_and_valid(self):
        parts = enumerate_partitions(4)
        assert len(set(parts)) == len(parts)
        for p in parts:
            assert sorted(m for block in p for m in block) == [0, 1, 2, 3]

    def test_cap_enforced(self):
        with pytest.raises(ValueError):
            enumerate_partitions(K_ORACLE_MAX + 1)

    def test_make_partition_rejects_overlap(self):
        with pytest.raises(ValueError):
            make_partition([(0, 1), (1, 2)])


class TestProfitableTransition:
    def test_current_coalition_is_none(self):
        table = narrative_table()
        state = make_state(make_partition([(0, 1), (2,)]), table)
        assert is_profitable_transition((0, 1), state, table) == "none"

    def test_pair_improving_over_singletons_is_strict(self):
        table = narrative_table()
        state = make_state(singleton_partition(range(3)), table)
        assert is_profitable_transition((0, 1), state, table) == "strict"

    def test_all_negative_table_has_no_transitions(self):
        table = constant_table(3, -0.5)
        state = make_state(singleton_partition(range(3)), table)
        for coal in all_coalitions(range(3)):
            if len(coal) > 1:
                assert is_profitable_transition(coal, state, table) == "none"

    def test_equal_benefit_move_is_weak(self):
        table = constant_table(3, 0.0)
        state = make_state(singleton_partition(range(3)), table)
        assert is_profitable_transition((0, 1), state, table) == "weak"


class TestIsEquilibrium:
    def test_grand_dominant_only_grand(self):
        table = grand_dominant_table(3)
        for partition in enumerate_partitions(3):
            state = make_state(partition, table)
            assert is_equilibrium(state, table) == (partition == grand_partition(range(3)))

    def test_all_zero_singletons(self):
        table = constant_table(4, 0.0)
        state = make_state(singleton_partition(range(4)), table)
        assert is_equilibrium(state, table)

    def test_agrees_with_naive_scan(self, rng):
        for _ in range(30):
            table = random_table(4, rng)
            for partition in enumerate_partitions(4):
                state = make_state(partition, table)
                assert is_equilibrium(state, table) == naive_is_equilibrium(state, table)


class TestBruteForce:
    def test_single_client(self):
        table = constant_table(1, 0.0)
        assert brute_force_equilibria(table) == {(((0,)),)}

    def test_grand_dominant(self):
        table = grand_dominant_table(3)
        assert brute_force_equilibria(table) == {grand_partition(range(3))}

    def test_narrative_equilibrium_found(self):
        table = narrative_table()
        equilibria = brute_force_equilibria(table)
        assert make_partition([(0,), (1, 2)]) in equilibria

    def test_may_be_empty_without_error(self, rng):
        # hunt for a table with no equilibrium; emptiness must be reported, not raised
        for seed in range(200):
            table = random_table(4, np.random.default_rng(seed))
            if not brute_force_equilibria(table):
                return
        pytest.skip("no equilibrium-free table found in 200 seeds")


class TestMergeBlocking:
    def test_all_zero_returns_singletons(self):
        table = constant_table(4, 0.0)
        result = merge_blocking(table, singleton_partition(range(4)))
        assert result.partition == singleton_partition(range(4))
        assert result.converged

    def test_grand_dominant_returns_grand(self):
        table = grand_dominant_table(4)
        result = merge_blocking(table, singleton_partition(range(4)))
        assert result.partition == grand_partition(range(4))
        assert result.converged
        assert result.traversal_rounds <= 2

    def test_narrative_reaches_equilibrium(self):
        table = narrative_table()
        result = merge_blocking(table, singleton_partition(range(3)))
        assert (1, 2) in result.partition
        assert is_equilibrium(make_state(result.partition, table), table)

    def test_random_tables_mostly_sound_and_oracle_members(self, rng):
        # stable-coalition pruning can miss a blocking coalition that spans a
        # frozen group, so soundness holds with high probability, not always;
        # the acceptance suite measures and persists the failures at scale
        total = sound = with_oracle = member = 0
        for _ in range(60):
            k = int(rng.integers(2, 6))
            table = random_table(k, rng)
            result = merge_blocking(table, singleton_partition(range(k)))
            assert sorted(m for b in result.partition for m in b) == list(range(k))
            if not result.converged:
                continue
            total += 1
            ok = is_equilibrium(make_state(result.partition, table), table)
            sound += ok
            oracle = brute_force_equilibria(table)
            if oracle:
                with_oracle += 1
                member += result.partition in oracle
        assert total > 0 and with_oracle > 0
        assert sound / total >= 0.9
        assert member / with_oracle >= 0.9

    def test_deterministic(self, rng):
        table = random_table(5, rng)
        a = merge_blocking(table, singleton_partition(range(5)))
        b = merge_blocking(table, singleton_partition(range(5)))
        assert a == b

    def test_pass_cap_reports_nonconvergence(self):
        table = grand_dominant_table(3)
        result = merge_blocking(table, singleton_partition(range(3)), max_passes=0)
        assert not result.converged
        assert sorted(m for b in result.partition for m in b) == [0, 1, 2]


class TestDynamicEvolution:
    def _graph(self, rng, k=5):
        thetas, grads, counts = random_snapshot(k, 8, rng)
        return AffinityGraph.from_snapshots(thetas, grads, counts, 0.2)

    def test_round_zero_seeds_singletons(self, rng):
        graph = self._graph(rng)
        table = build_benefit_table(graph)
        direct = merge_blocking(table, singleton_partition(table.clients))
        assert dynamic_evolution(0, None, graph, table=table) == direct

    def test_frozen_table_is_fixpoint(self, rng):
        graph = self._graph(rng)
        table = build_benefit_table(graph)
        first = dynamic_evolution(0, None, graph, table=table)
        assert is_equilibrium(make_state(first.partition, table), table)
        second = dynamic_evolution(1, first, graph, table=table)
        assert second.partition == first.partition

    def test_perturbed_table_reacts(self, rng):
        graph = self._graph(rng, k=4)
        table = build_benefit_table(graph)
        first = dynamic_evolution(0, None, graph, table=table)
        assert first.partition != grand_partition(range(4))
        # make the grand coalition dominant: the previous partition is now blocked
        grand = tuple(range(4))
        bumped = {c: dict(v) for c, v in table.entries.items()}
        bumped[grand] = {m: 10.0 for m in grand}
        new_table = BenefitTable(entries=bumped, clients=table.clients)
        second = dynamic_evolution(1, first, graph, table=new_table)
        assert second.partition != first.partition
        assert is_equilibrium(make_state(second.partition, new_table), new_table)
