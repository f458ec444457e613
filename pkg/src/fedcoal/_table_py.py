"""Pure-NumPy closed-form benefit kernel (fallback for the compiled one).

Given the pairwise cosine matrices and per-client norms/counts, evaluates
every member benefit for a batch of coalitions encoded as bitmasks. Output
is one float per (coalition, member) pair, coalitions in input order,
members ascending.
"""

from __future__ import annotations

import numpy as np


def benefits_for_masks(
    masks: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    g_norms: np.ndarray,
    theta_norms: np.ndarray,
    counts: np.ndarray,
    epsilon: float,
    tau: float,
) -> np.ndarray:
    num_clients = a.shape[0]
    all_ids = np.arange(num_clients)
    wg_all = counts * g_norms
    wt_all = counts * theta_norms
    out = []
    for mask in masks:
        members = all_ids[(int(mask) >> all_ids) & 1 == 1]
        size = len(members)
        if size == 1:
            out.append(0.0)
            continue
        if size == 2:
            i, j = members
            val = a[i, j] + epsilon * b[i, j]
            out.extend((val, val))
            continue
        for pos in range(size):
            i = members[pos]
            peers = np.delete(members, pos)
            denom = counts[peers].sum()
            tau_sq = (tau * denom) ** 2
            u = 0.0
            wg = wg_all[peers]
            rad_g = wg @ a[np.ix_(peers, peers)] @ wg
            if rad_g > tau_sq:
                u += (a[i, peers] @ wg) / np.sqrt(rad_g)
            if epsilon != 0.0:
                wt = wt_all[peers]
                rad_t = wt @ b[np.ix_(peers, peers)] @ wt
                if rad_t > tau_sq:
                    u += epsilon * (b[i, peers] @ wt) / np.sqrt(rad_t)
            out.append(float(u))
    return np.asarray(out, dtype=np.float64)
