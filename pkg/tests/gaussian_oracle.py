"""Brute-force linear-Gaussian oracle for OUBM/OUOU tip distributions.

Every node state is written as ``const + A @ z`` with ``z`` the vector of
independent standard normals, one per (branch, trait). The tip mean and
covariance follow from composing branch transitions by hand, without any
code from the package under test.
"""

import math

import numpy as np


def tip_moments(parent, lengths, tips, alpha_y, tau, sigma_x, b0, b, predictor="BM",
                alpha_x=None, theta_x=0.0, y0=0.0):
    n_nodes = len(parent)
    k = len(b)
    n_z = n_nodes * (k + 1)
    # per node: const (k+1,) and loadings (k+1, n_z); trait 0 is y
    const = np.zeros((n_nodes, k + 1))
    load = np.zeros((n_nodes, k + 1, n_z))
    root = parent.index(-1)
    const[root, 0] = y0
    const[root, 1:] = theta_x if predictor == "OU" else 0.0

    order = [root]
    for node in order:
        order.extend(c for c, p in enumerate(parent) if p == node)
    for node in order[1:]:
        p, t = parent[node], lengths[node]
        z0 = node * (k + 1)
        for j in range(k):
            if predictor == "OU":
                decay = math.exp(-alpha_x * t)
                const[node, 1 + j] = const[p, 1 + j] * decay + theta_x * (1 - decay)
                load[node, 1 + j] = load[p, 1 + j] * decay
                sd = sigma_x * math.sqrt((1 - math.exp(-2 * alpha_x * t)) / (2 * alpha_x))
            else:
                const[node, 1 + j] = const[p, 1 + j]
                load[node, 1 + j] = load[p, 1 + j]
                sd = sigma_x * math.sqrt(t)
            load[node, 1 + j, z0 + 1 + j] += sd
        # optimum at the child node, linear in its predictors
        th_const = b0 + sum(b[j] * const[node, 1 + j] for j in range(k))
        th_load = sum(b[j] * load[node, 1 + j] for j in range(k))
        decay = math.exp(-alpha_y * t)
        const[node, 0] = const[p, 0] * decay + th_const * (1 - decay)
        load[node, 0] = load[p, 0] * decay + th_load * (1 - decay)
        load[node, 0, z0] += tau * math.sqrt((1 - math.exp(-2 * alpha_y * t)) / (2 * alpha_y))

    rows_c = np.concatenate([const[tip] for tip in tips])
    rows_a = np.concatenate([load[tip] for tip in tips])
    return rows_c, rows_a @ rows_a.T
