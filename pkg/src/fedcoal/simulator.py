"""Round-loop orchestration, metrics and communication accounting.

Each communication round: clients run distillation-regularized local SGD on
their current task, the coordinator snapshots parameters and realized
updates, builds the affinity graph, picks a partition according to the
strategy, and every coalition aggregates with count weights over all of its
members (each member receives the identical average). Strategies:

- ``dcfcl``: merge-blocking equilibrium, re-evolved every round (or once
  per task phase with ``cadence='task'``).
- ``local``: singletons, no aggregation, no traffic.
- ``global_avg``: one grand coalition every round.
- ``static``: the round-0 equilibrium frozen for the whole run.

Accuracy is recorded at every task boundary into an ``AccuracyMatrix``
(client, learned-through task, evaluated task), from which the weighted
average-accuracy and average-forgetting metrics are computed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import affinity as aff
from . import game
from .data import ClientTimeline, ScenarioConfig, build_scenario
from .model import Batch, Classifier, Hyperparams, classification_loss, forward, local_train
from .params import weighted_average

STRATEGIES = ("dcfcl", "local", "global_avg", "static")

# rng stream tags under the single run seed
_RNG_TRAIN = 100


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    hp: Hyperparams
    rounds: int = 60
    strategy: str = "dcfcl"
    seed: int = 0
    oracle_checks: bool = False
    cadence: str = "round"  # 'round' or 'task': how often dcfcl re-evolves

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.cadence not in ("round", "task"):
            raise ValueError(f"unknown cadence {self.cadence!r}")
        if self.rounds < 1 or self.rounds % self.scenario.num_tasks != 0:
            raise ValueError("rounds must be a positive multiple of num_tasks")
        scen = self.scenario
        if scen.seed is None:
            scen = dataclasses.replace(scen, seed=self.seed)
        scen.validate()


@dataclass
class RoundRecord:
    round: int
    task_phase: int
    partition: game.Partition
    per_client_benefits: dict[int, float]
    per_client_accuracy: dict[int, float]
    bytes_up: int
    bytes_down: int
    converged: bool | None = None
    traversal_rounds: int | None = None
    equilibrium_verified: bool | None = None
    benefit_val_spearman: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "round": self.round,
            "task_phase": self.task_phase,
            "partition": [list(b) for b in self.partition],
            "per_client_benefits": {str(k): v for k, v in self.per_client_benefits.items()},
            "per_client_accuracy": {str(k): v for k, v in self.per_client_accuracy.items()},
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "converged": self.converged,
            "traversal_rounds": self.traversal_rounds,
            "equilibrium_verified": self.equilibrium_verified,
            "benefit_val_spearman": self.benefit_val_spearman,
        }


@dataclass
class AccuracyMatrix:
    """a[(client, learned_through, eval_task)] -> accuracy; counts[(client, task)] -> n."""

    num_tasks: int
    acc: dict[tuple[int, int, int], float] = field(default_factory=dict)
    counts: dict[tuple[int, int], int] = field(default_factory=dict)


def average_accuracy(m: AccuracyMatrix) -> float:
    """Count-weighted accuracy over all tasks after the final task."""
    last = m.num_tasks - 1
    num = den = 0.0
    for (k, t), n in m.counts.items():
        num += m.acc[(k, last, t)] * n
        den += n
    return num / den


def average_forgetting(m: AccuracyMatrix) -> float:
    """Count-weighted peak-minus-final accuracy drop over non-final tasks.

    The peak includes the final phase, so a task whose accuracy never
    dropped contributes exactly 0 instead of a negative value.
    """
    last = m.num_tasks - 1
    if last == 0:
        return 0.0
    num = den = 0.0
    for (k, t), n in m.counts.items():
        if t >= last:
            continue
        peak = max(m.acc[(k, i, t)] for i in range(t, last + 1) if (k, i, t) in m.acc)
        num += (peak - m.acc[(k, last, t)]) * n
        den += n
    return num / den


def aggregate_coalition(coal, flat_models: dict[int, np.ndarray], counts) -> dict[int, np.ndarray]:
    """Every member receives the identical count-weighted average over the
    full coalition, member included."""
    members = aff.coalition(coal)
    avg = weighted_average([flat_models[m] for m in members], [counts[m] for m in members])
    return {m: avg for m in members}


def _masked_accuracy(clf: Classifier, x, y, class_mask) -> float:
    logits = np.where(class_mask, forward(clf, x), -np.inf)
    return float((logits.argmax(axis=1) == y).mean())


def _spearman(x, y) -> float | None:
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        out = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            out[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return out

    rx, ry = ranks(x), ranks(y)
    if rx.std() == 0 or ry.std() == 0:
        return None
    return float(np.corrcoef(rx, ry)[0, 1])


@dataclass
class _ClientState:
    timeline: ClientTimeline
    model: Classifier
    teacher: Classifier | None
    last_agg: np.ndarray
    mask: np.ndarray


def _partition_benefits(partition: game.Partition, graph: aff.AffinityGraph) -> dict[int, float]:
    out: dict[int, float] = {}
    for block in partition:
        for m in block:
            out[m] = aff.coalition_benefit_closed(m, block, graph)
    return out


def _benefit_val_correlation(
    clients: list[_ClientState], thetas, counts, graph, num_classes, feature_dim, phase
) -> float | None:
    """Spearman rank correlation between the similarity benefit of each pair
    and the validation-loss benefit of actually aggregating that pair."""
    sims, vals = [], []
    k = len(clients)
    for me in range(k):
        task = clients[me].timeline.tasks[phase]
        if len(task.val_y) == 0:
            continue
        batch = Batch(task.val_x, task.val_y)
        for peer in range(k):
            if peer == me:
                continue
            merged = weighted_average([thetas[me], thetas[peer]], [counts[me], counts[peer]])
            clf = Classifier.unflatten(merged, num_classes, feature_dim)
            loss = classification_loss(clf, batch, clients[me].mask) / len(task.val_y)
            sims.append(aff.pairwise_benefit(me, peer, graph))
            vals.append(-loss)
    if not sims:
        return None
    return _spearman(sims, vals)


def run(config: RunConfig) -> tuple[AccuracyMatrix, list[RoundRecord], dict]:
    """Execute a full run; deterministic in ``config``.

    Returns the accuracy matrix, the per-round records and a summary dict.
    """
    config.validate()
    scen = config.scenario
    if scen.seed is None:
        scen = dataclasses.replace(scen, seed=config.seed)
    timelines = build_scenario(scen)

    m_classes = scen.num_classes
    dim = scen.feature_dim
    k = scen.num_clients
    flat_dim = m_classes * dim + m_classes
    rounds_per_task = config.rounds // scen.num_tasks

    clients = [
        _ClientState(
            timeline=tl,
            model=Classifier.zeros(m_classes, dim),
            teacher=None,
            last_agg=np.zeros(flat_dim),
            mask=np.zeros(m_classes, dtype=bool),
        )
        for tl in timelines
    ]

    matrix = AccuracyMatrix(num_tasks=scen.num_tasks)
    for st in clients:
        for t, task in enumerate(st.timeline.tasks):
            matrix.counts[(st.timeline.client_id, t)] = task.train_count

    records: list[RoundRecord] = []
    prev_eq: game.EquilibriumResult | None = None
    frozen_partition: game.Partition | None = None
    oracle_failures = 0
    unconverged = 0

    for rnd in range(config.rounds):
        phase = rnd // rounds_per_task
        at_phase_start = rnd % rounds_per_task == 0
        if at_phase_start:
            for st in clients:
                seen = st.timeline.seen_classes(phase)
                st.mask = np.zeros(m_classes, dtype=bool)
                st.mask[list(seen)] = True

        # (a) local iterations
        for st in clients:
            task = st.timeline.tasks[phase]
            rng = np.random.default_rng(
                [config.seed, _RNG_TRAIN, rnd, st.timeline.client_id]
            )
            st.model = local_train(
                st.model, st.teacher, task.train_x, task.train_y, config.hp, rng, st.mask
            )

        thetas = {st.timeline.client_id: st.model.flatten() for st in clients}
        grads = {cid: thetas[cid] - clients[cid].last_agg for cid in thetas}
        counts = {
            st.timeline.client_id: st.timeline.tasks[phase].train_count for st in clients
        }
        graph = aff.AffinityGraph.from_snapshots(
            [thetas[c] for c in range(k)],
            [grads[c] for c in range(k)],
            [counts[c] for c in range(k)],
            config.hp.epsilon,
        )

        eq: game.EquilibriumResult | None = None
        if config.strategy == "local":
            partition = game.singleton_partition(range(k))
        elif config.strategy == "global_avg":
            partition = game.grand_partition(range(k))
        elif config.strategy == "static":
            if frozen_partition is None:
                eq = game.dynamic_evolution(0, None, graph)
                frozen_partition = eq.partition
            partition = frozen_partition
        else:  # dcfcl
            if config.cadence == "task" and not at_phase_start and prev_eq is not None:
                partition = prev_eq.partition
            else:
                table = aff.build_benefit_table(graph)
                eq = game.dynamic_evolution(rnd, prev_eq, graph, table=table)
                prev_eq = eq
                if not eq.converged:
                    unconverged += 1
                partition = eq.partition
                if config.oracle_checks:
                    verified = game.is_equilibrium(game.make_state(partition, table), table)
                    if not verified:
                        oracle_failures += 1
            if eq is None and prev_eq is not None:
                eq = prev_eq

        # (b) coalition-wise aggregation
        if config.strategy != "local":
            for block in partition:
                merged = aggregate_coalition(block, thetas, counts)
                for cid, flat in merged.items():
                    clients[cid].model = Classifier.unflatten(flat, m_classes, dim)
                    clients[cid].last_agg = flat
        else:
            for cid in range(k):
                clients[cid].last_agg = thetas[cid]

        for st in clients:
            st.teacher = st.model.copy()

        traffic = 0 if config.strategy == "local" else flat_dim * 8 * k
        per_acc = {}
        for st in clients:
            cid = st.timeline.client_id
            num = den = 0.0
            for t in range(phase + 1):
                task = st.timeline.tasks[t]
                n = matrix.counts[(cid, t)]
                num += _masked_accuracy(st.model, task.test_x, task.test_y, st.mask) * n
                den += n
            per_acc[cid] = num / den

        record = RoundRecord(
            round=rnd,
            task_phase=phase,
            partition=partition,
            per_client_benefits=_partition_benefits(partition, graph),
            per_client_accuracy=per_acc,
            bytes_up=traffic,
            bytes_down=traffic,
        )
        if eq is not None:
            record.converged = eq.converged
            record.traversal_rounds = eq.traversal_rounds
        if config.oracle_checks:
            record.benefit_val_spearman = _benefit_val_correlation(
                clients, thetas, counts, graph, m_classes, dim, phase
            )
            if config.strategy == "dcfcl":
                record.equilibrium_verified = oracle_failures == 0
        records.append(record)

        if (rnd + 1) % rounds_per_task == 0:
            for st in clients:
                cid = st.timeline.client_id
                for t in range(phase + 1):
                    task = st.timeline.tasks[t]
                    matrix.acc[(cid, phase, t)] = _masked_accuracy(
                        st.model, task.test_x, task.test_y, st.mask
                    )

    corr = [r.benefit_val_spearman for r in records if r.benefit_val_spearman is not None]
    summary = {
        "config": {
            "scenario": dataclasses.asdict(scen),
            "hp": dataclasses.asdict(config.hp),
            "rounds": config.rounds,
            "strategy": config.strategy,
            "seed": config.seed,
            "oracle_checks": config.oracle_checks,
            "cadence": config.cadence,
        },
        "average_accuracy": average_accuracy(matrix),
        "average_forgetting": average_forgetting(matrix),
        "final_partition": [list(b) for b in records[-1].partition],
        "bytes_up_total": sum(r.bytes_up for r in records),
        "bytes_down_total": sum(r.bytes_down for r in records),
        "unconverged_rounds": unconverged,
        "equilibrium_oracle_failures": oracle_failures if config.oracle_checks else None,
        "benefit_val_spearman_mean": float(np.mean(corr)) if corr else None,
        "kernel_backend": aff.kernel_backend(),
    }
    return matrix, records, summary
