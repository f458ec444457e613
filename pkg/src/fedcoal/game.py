"""Coalition-formation game engine.

States are partitions of the active clients plus the benefit vector they
induce under a ``BenefitTable``. A coalition *blocks* a state when forming
it would leave every member at least as well off and at least one member
strictly better off; an equilibrium is a state no coalition blocks.

Two solvers are provided:

- ``brute_force_equilibria``: enumerate every partition (restricted-growth
  strings) and keep the ones no coalition blocks. Exact, exponential, desk
  scale only (``K_ORACLE_MAX``).
- ``merge_blocking``: sweep the coalition set in size-ascending order,
  greedily applying blocking coalitions; coalitions that survive a full
  sweep unchanged the longest are frozen as *stable coalitions* and their
  clients pruned from the search. Fast, but its output is only checked -
  never assumed - to be an equilibrium.

``dynamic_evolution`` re-runs merge-blocking each round, seeded with the
previous equilibrium so an unchanged table is a fixpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinity import AffinityGraph, BenefitTable, Coalition, all_coalitions, build_benefit_table, coalition

# Slack applied to the >= side of benefit comparisons only; the strict side
# stays exact so equal table entries can never manufacture an improvement.
DELTA = 1e-12

# Partition enumeration is desk-scale only (B_8 = 4140 states).
K_ORACLE_MAX = 8

Partition = tuple[Coalition, ...]


def make_partition(coalitions) -> Partition:
    """Canonical partition: disjoint coalitions sorted by member list."""
    blocks = tuple(sorted(coalition(c) for c in coalitions))
    seen: set[int] = set()
    for block in blocks:
        for m in block:
            if m in seen:
                raise ValueError(f"client {m} appears in two coalitions")
            seen.add(m)
    if not blocks:
        raise ValueError("partition must be nonempty")
    return blocks


def partition_clients(partition: Partition) -> tuple[int, ...]:
    return tuple(sorted(m for block in partition for m in block))


def coalition_of(partition: Partition, client: int) -> Coalition:
    for block in partition:
        if client in block:
            return block
    raise KeyError(f"client {client} not in partition")


def singleton_partition(clients) -> Partition:
    return make_partition([(c,) for c in clients])


def grand_partition(clients) -> Partition:
    return make_partition([tuple(sorted(clients))])


@dataclass
class CooperativeState:
    partition: Partition
    benefits: dict[int, float]


def make_state(partition: Partition, table: BenefitTable) -> CooperativeState:
    benefits = {m: table.entries[block][m] for block in partition for m in block}
    return CooperativeState(partition=partition, benefits=benefits)


@dataclass
class EquilibriumResult:
    partition: Partition
    stable_coalitions: list[Coalition]
    traversal_rounds: int
    converged: bool

    def to_json_dict(self) -> dict:
        return {
            "partition": [list(block) for block in self.partition],
            "stable_coalitions": [list(block) for block in self.stable_coalitions],
            "traversal_rounds": self.traversal_rounds,
            "converged": self.converged,
        }


def bell_number(n: int) -> int:
    """Number of partitions of an n-element set (Bell triangle)."""
    if n < 1:
        return 1
    row = [1]
    for _ in range(n - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1]


def enumerate_partitions(num_clients: int, cap: int = K_ORACLE_MAX) -> list[Partition]:
    """All partitions of range(num_clients) in restricted-growth-string order."""
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_clients > cap:
        raise ValueError(f"partition enumeration capped at {cap} clients")
    out: list[Partition] = []
    rgs = [0] * num_clients

    def rec(pos: int, max_label: int) -> None:
        if pos == num_clients:
            blocks: list[list[int]] = [[] for _ in range(max_label + 1)]
            for idx, label in enumerate(rgs):
                blocks[label].append(idx)
            out.append(tuple(tuple(block) for block in blocks))
            return
        for label in range(max_label + 2):
            rgs[pos] = label
            rec(pos + 1, max(max_label, label))

    rec(1, 0)
    return out


def _blocks_state(members: Coalition, gains: dict[int, float], current: dict[int, float]) -> bool:
    all_ge = all(gains[m] > current[m] - DELTA for m in members)
    any_gt = any(gains[m] > current[m] for m in members)
    return all_ge and any_gt


def is_profitable_transition(coal, state: CooperativeState, table: BenefitTable) -> str:
    """'none', 'weak' (all members >=) or 'strict' (>= for all, > for one).

    A coalition already present in the partition is 'none': forming it
    changes nothing.
    """
    members = coalition(coal)
    if members in state.partition:
        return "none"
    gains = table.entries[members]
    if not all(gains[m] > state.benefits[m] - DELTA for m in members):
        return "none"
    if any(gains[m] > state.benefits[m] for m in members):
        return "strict"
    return "weak"


def is_equilibrium(state: CooperativeState, table: BenefitTable) -> bool:
    """True iff no coalition over the active clients blocks the state."""
    for members, gains in table.entries.items():
        if _blocks_state(members, gains, state.benefits):
            return False
    return True


class _TableIndex:
    """Dense array view of a table for the vectorized blocking scan."""

    def __init__(self, table: BenefitTable):
        self.clients = table.clients
        col = {c: idx for idx, c in enumerate(self.clients)}
        n = len(table.entries)
        k = len(self.clients)
        self.member_mask = np.zeros((n, k), dtype=bool)
        self.benefits = np.zeros((n, k))
        for row, (members, gains) in enumerate(table.entries.items()):
            for m in members:
                self.member_mask[row, col[m]] = True
                self.benefits[row, col[m]] = gains[m]
        self.col = col

    def blocked(self, current: np.ndarray) -> bool:
        ge = np.where(self.member_mask, self.benefits > current - DELTA, True).all(axis=1)
        gt = (self.member_mask & (self.benefits > current)).any(axis=1)
        return bool((ge & gt).any())


def brute_force_equilibria(table: BenefitTable, cap: int = K_ORACLE_MAX) -> set[Partition]:
    """Every equilibrium partition, by exhaustive state enumeration.

    May be empty: nothing guarantees an equilibrium exists for an arbitrary
    table, so emptiness is a result, not an error.
    """
    clients = table.clients
    index = _TableIndex(table)
    found: set[Partition] = set()
    for pos_partition in enumerate_partitions(len(clients), cap=cap):
        partition = make_partition(
            [tuple(clients[p] for p in block) for block in pos_partition]
        )
        current = np.zeros(len(clients))
        for block in partition:
            gains = table.entries[block]
            for m in block:
                current[index.col[m]] = gains[m]
        if not index.blocked(current):
            found.add(partition)
    return found


def _apply_block(partition: Partition, members: Coalition) -> Partition:
    """Form ``members``; remnants of broken coalitions stay together."""
    taken = set(members)
    blocks: list[Coalition] = [members]
    for block in partition:
        rest = tuple(m for m in block if m not in taken)
        if rest:
            blocks.append(rest)
    return make_partition(blocks)


def merge_blocking(
    table: BenefitTable,
    initial: Partition,
    coalition_set=None,
    max_passes: int | None = None,
) -> EquilibriumResult:
    """Size-ascending blocking-coalition sweep with stable-coalition pruning.

    Each pass scans the live coalition set; an accepted blocking coalition
    rewrites the working partition, resets the survival counts of coalitions
    it displaced and bumps the counts of everything still standing. After a
    pass with updates, the longest-surviving coalition (max count, ties to
    the lexicographically smallest) is frozen: its clients leave the search
    and it joins the output. A pass without updates ends the search with the
    remaining partition appended.

    There is no termination proof for adversarial tables, so passes are
    capped (default 10 * K) and overruns surface as ``converged=False`` with
    the best partition so far.
    """
    working = make_partition(initial)
    active = partition_clients(working)
    if coalition_set is None:
        live = all_coalitions(active)
    else:
        live = sorted((coalition(c) for c in coalition_set), key=lambda c: (len(c), c))
    if max_passes is None:
        max_passes = 10 * len(active)

    stable: list[Coalition] = []
    previous: Partition | None = None
    passes = 0
    converged = True

    while working != previous and working:
        if passes >= max_passes:
            converged = False
            break
        passes += 1
        previous = working
        counts: dict[Coalition, int] = {}
        current = {m: table.entries[block][m] for block in working for m in block}
        for members in live:
            gains = table.entries[members]
            if _blocks_state(members, gains, current):
                working = _apply_block(working, members)
                current = {m: table.entries[block][m] for block in working for m in block}
                counts = {c: n for c, n in counts.items() if c in working}
                for block in working:
                    counts[block] = counts.get(block, 0) + 1
        if counts:
            top = max(counts.values())
            sc = min(c for c, n in counts.items() if n == top)
            stable.append(sc)
            working = tuple(block for block in working if block != sc)
            frozen = set(sc)
            live = [c for c in live if frozen.isdisjoint(c)]
        else:
            break  # pass produced no update: remaining partition is final

    final_blocks = list(stable) + list(working)
    return EquilibriumResult(
        partition=make_partition(final_blocks),
        stable_coalitions=stable,
        traversal_rounds=passes,
        converged=converged,
    )


def dynamic_evolution(
    round_idx: int,
    prev: EquilibriumResult | None,
    graph: AffinityGraph,
    table: BenefitTable | None = None,
) -> EquilibriumResult:
    """Per-round equilibrium update.

    Round 0 (or no previous result) starts merge-blocking from singletons;
    later rounds seed it with the previous partition over the full
    re-expanded coalition set, so a table that did not change returns the
    previous partition untouched.
    """
    if table is None:
        table = build_benefit_table(graph)
    if round_idx == 0 or prev is None:
        seed = singleton_partition(table.clients)
    else:
        seed = prev.partition
    return merge_blocking(table, seed)
