"""Cooperation-benefit quantification.

A round snapshot of all clients is condensed into an ``AffinityGraph``:
pairwise cosines between gradient proxies (``a``) and between model
parameters (``b``), plus per-client norms and sample counts. From the graph
alone, the benefit a client derives from any coalition is available in
closed form; ``coalition_benefit_direct`` recomputes the same quantity from
the raw vectors (aggregate the peers, then take cosines) and serves as the
independent oracle for the closed form.

``build_benefit_table`` evaluates the closed form for every coalition using
a compiled kernel when available (``fedcoal._table_cy``) and a pure-NumPy
fallback otherwise; set FEDCOAL_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import _table_py
from .params import TAU_NORM, cosine, weighted_average

if os.environ.get("FEDCOAL_PURE_PYTHON"):
    _kernel = _table_py
else:
    try:
        from . import _table_cy as _kernel  # type: ignore[no-redef]
    except ImportError:
        _kernel = _table_py

# Hard cap on table size: 2^20 coalitions is already ~20M member entries.
MAX_TABLE_CLIENTS = 20

Coalition = tuple[int, ...]


def kernel_backend() -> str:
    """Which benefit kernel is active: 'compiled' or 'python'."""
    return "compiled" if _kernel.__name__.endswith("_table_cy") else "python"


def coalition(members) -> Coalition:
    """Canonical coalition: sorted, duplicate-free, nonempty tuple of ids."""
    out = tuple(sorted(int(m) for m in members))
    if not out:
        raise ValueError("coalition must be nonempty")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate members in {out}")
    return out


def all_coalitions(clients) -> list[Coalition]:
    """Every nonempty subset, size-ascending then lexicographic."""
    ids = sorted(int(c) for c in clients)
    out: list[Coalition] = []
    for size in range(1, len(ids) + 1):
        out.extend(combinations(ids, size))
    return out


@dataclass
class AffinityGraph:
    """Per-round pairwise-similarity cache.

    ``a[i, j]``/``b[i, j]`` are gradient/model cosines with diagonal 1 for
    nondegenerate clients; norms of degenerate vectors are stored as exactly
    0 so degenerate clients drop out of every downstream sum.
    """

    a: np.ndarray
    b: np.ndarray
    g_norms: np.ndarray
    theta_norms: np.ndarray
    sample_counts: np.ndarray
    epsilon: float

    @property
    def num_clients(self) -> int:
        return self.a.shape[0]

    @classmethod
    def from_snapshots(cls, thetas, grads, sample_counts, epsilon: float) -> "AffinityGraph":
        """Build the graph from one coherent round snapshot.

        thetas/grads: (K, dim) arrays (or lists of flat vectors) holding each
        client's post-training parameters and realized update.
        """
        thetas = np.asarray(thetas, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        k = thetas.shape[0]
        if grads.shape != thetas.shape:
            raise ValueError("thetas and grads must have identical shape")
        counts = np.asarray(sample_counts, dtype=np.float64)
        if counts.shape != (k,) or np.any(counts < 1):
            raise ValueError("need one positive sample count per client")

        t_norms = np.linalg.norm(thetas, axis=1)
        g_norms = np.linalg.norm(grads, axis=1)
        t_norms[t_norms < TAU_NORM] = 0.0
        g_norms[g_norms < TAU_NORM] = 0.0

        a = np.eye(k)
        b = np.eye(k)
        for i in range(k):
            for j in range(i + 1, k):
                a[i, j] = a[j, i] = cosine(grads[i], grads[j])
                b[i, j] = b[j, i] = cosine(thetas[i], thetas[j])
        a[g_norms == 0.0, :] = 0.0
        a[:, g_norms == 0.0] = 0.0
        b[t_norms == 0.0, :] = 0.0
        b[:, t_norms == 0.0] = 0.0
        return cls(a, b, g_norms, t_norms, counts, float(epsilon))


def pairwise_benefit(i: int, j: int, graph: AffinityGraph) -> float:
    """Two-client benefit a_ij + epsilon * b_ij (symmetric)."""
    if i == j:
        raise ValueError("pairwise benefit needs two distinct clients")
    return float(graph.a[i, j] + graph.epsilon * graph.b[i, j])


def coalition_benefit_closed(i: int, coal, graph: AffinityGraph) -> float:
    """Closed-form benefit of client i in a coalition.

    Singletons earn 0; a pair earns the pairwise benefit; larger coalitions
    earn the cosine between i and the count-weighted aggregate of its peers,
    reconstructed purely from pairwise cosines: for each of the gradient and
    model terms,

        sum_p alpha_p c_ip ||v_p|| / sqrt(sum_p alpha_p^2 ||v_p||^2 + X)

    with X the cross term sum_{p != q} 2 alpha_p alpha_q c_pq ||v_p|| ||v_q||
    and alpha the peer-only count weights. A radicand at or below
    TAU_NORM^2 zeroes that term (degenerate aggregate).
    """
    members = coalition(coal)
    if i not in members:
        raise ValueError(f"client {i} not in coalition {members}")
    if len(members) == 1:
        return 0.0
    if len(members) == 2:
        j = members[0] if members[1] == i else members[1]
        return pairwise_benefit(i, j, graph)

    peers = np.array([p for p in members if p != i])
    alphas = graph.sample_counts[peers] / graph.sample_counts[peers].sum()
    value = 0.0
    for cos_mat, norms, weight in (
        (graph.a, graph.g_norms, 1.0),
        (graph.b, graph.theta_norms, graph.epsilon),
    ):
        if weight == 0.0:
            continue
        w = alphas * norms[peers]
        numer = float(cos_mat[i, peers] @ w)
        off_diag = cos_mat[np.ix_(peers, peers)].copy()
        np.fill_diagonal(off_diag, 0.0)
        radicand = float(w @ w) + float(w @ off_diag @ w)
        if radicand > TAU_NORM**2:
            value += weight * numer / math.sqrt(radicand)
    return value


def coalition_benefit_direct(
    i: int, coal, thetas, grads, sample_counts, epsilon: float
) -> float:
    """Oracle benefit: aggregate the raw peer vectors, then take cosines.

    For coalitions of size <= 2 this is the same piecewise value as the
    closed form (0 for singletons, plain pairwise cosines for a pair).
    """
    members = coalition(coal)
    if i not in members:
        raise ValueError(f"client {i} not in coalition {members}")
    thetas = np.asarray(thetas, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if len(members) == 1:
        return 0.0
    if len(members) == 2:
        j = members[0] if members[1] == i else members[1]
        return cosine(grads[i], grads[j]) + epsilon * cosine(thetas[i], thetas[j])
    peers = [p for p in members if p != i]
    g_avg = weighted_average([grads[p] for p in peers], counts[peers])
    t_avg = weighted_average([thetas[p] for p in peers], counts[peers])
    return cosine(g_avg, grads[i]) + epsilon * cosine(t_avg, thetas[i])


@dataclass
class BenefitTable:
    """Benefit of every member of every coalition in the active set."""

    entries: dict[Coalition, dict[int, float]]
    clients: tuple[int, ...]

    def benefit(self, coal, i: int) -> float:
        return self.entries[coalition(coal)][i]

    def coalitions(self) -> list[Coalition]:
        return list(self.entries.keys())

    def to_json(self) -> str:
        doc = {
            "clients": list(self.clients),
            "entries": {
                ",".join(map(str, coal)): {str(i): u for i, u in members.items()}
                for coal, members in self.entries.items()
            },
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "BenefitTable":
        doc = json.loads(text)
        entries: dict[Coalition, dict[int, float]] = {}
        for key, members in doc["entries"].items():
            coal = coalition(int(t) for t in key.split(","))
            entries[coal] = {int(i): float(u) for i, u in members.items()}
        table = cls(entries=entries, clients=tuple(int(c) for c in doc["clients"]))
        table.validate()
        return table

    def validate(self) -> None:
        for coal, members in self.entries.items():
            if set(members) != set(coal):
                raise ValueError(f"coalition {coal} missing member benefits")
            if len(coal) == 1 and members[coal[0]] != 0.0:
                raise ValueError(f"singleton {coal} must have benefit 0")
        for c in self.clients:
            if (c,) not in self.entries:
                raise ValueError(f"missing singleton entry for client {c}")


def build_benefit_table(graph: AffinityGraph, coalition_set=None) -> BenefitTable:
    """Evaluate the closed form for every coalition (all subsets by default).

    Deterministic: the coalition iteration order is fixed by the sorted
    coalition key regardless of which kernel computes the values.
    """
    k = graph.num_clients
    if k > MAX_TABLE_CLIENTS:
        raise ValueError(f"benefit table capped at {MAX_TABLE_CLIENTS} clients, got {k}")
    if coalition_set is None:
        coals = all_coalitions(range(k))
    else:
        coals = sorted((coalition(c) for c in coalition_set), key=lambda c: (len(c), c))
    masks = np.array([sum(1 << m for m in coal) for coal in coals], dtype=np.int64)
    values = _kernel.benefits_for_masks(
        masks,
        np.ascontiguousarray(graph.a, dtype=np.float64),
        np.ascontiguousarray(graph.b, dtype=np.float64),
        np.ascontiguousarray(graph.g_norms, dtype=np.float64),
        np.ascontiguousarray(graph.theta_norms, dtype=np.float64),
        np.ascontiguousarray(graph.sample_counts, dtype=np.float64),
        float(graph.epsilon),
        TAU_NORM,
    )
    entries: dict[Coalition, dict[int, float]] = {}
    pos = 0
    for coal in coals:
        entries[coal] = {m: float(values[pos + idx]) for idx, m in enumerate(coal)}
        pos += len(coal)
    return BenefitTable(entries=entries, clients=tuple(range(k)))


def random_table(num_clients: int, rng: np.random.Generator, low=-1.0, high=1.0) -> BenefitTable:
    """Arbitrary per-member benefits (singletons 0); game-engine test input."""
    entries: dict[Coalition, dict[int, float]] = {}
    for coal in all_coalitions(range(num_clients)):
        if len(coal) == 1:
            entries[coal] = {coal[0]: 0.0}
        else:
            entries[coal] = {m: float(rng.uniform(low, high)) for m in coal}
    return BenefitTable(entries=entries, clients=tuple(range(num_clients)))
