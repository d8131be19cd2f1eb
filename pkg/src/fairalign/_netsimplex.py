"""Numba kernel for the uniform-marginal transportation simplex.

The problem is stated in integer units: each of the ``n0`` rows supplies
``n1`` units and each of the ``n1`` columns demands ``n0`` units, so the
coupling is ``flow / (n0 * n1)``. Supplies are perturbed (Orden's rule)
to make every basis non-degenerate, which rules out cycling for any
entering-arc choice:

    supply_i = M * n1 + 1
    demand_j = M * n0            (j < n1 - 1)
    demand_last = M * n0 + n0

with ``M > 2 * n0``; the unperturbed flow is ``round(flow / M)``.

Nodes ``0..n0-1`` are rows and ``n0..n0+n1-1`` are columns. A basis is a
spanning tree with ``n0 + n1 - 1`` arcs stored as parallel arrays.
"""

import numpy as np
from numba import njit

OPTIMAL = 0
PIVOT_LIMIT = 1


def perturbation_scale(n0):
    return 2 * n0 + 2


@njit(cache=True, nogil=True)
def northwest_corner(n0, n1, scale):
    n_arcs = n0 + n1 - 1
    arc_i = np.empty(n_arcs, np.int64)
    arc_j = np.empty(n_arcs, np.int64)
    flow = np.empty(n_arcs, np.int64)
    i = 0
    j = 0
    supply = scale * n1 + 1
    demand = scale * n0 + (n0 if n1 == 1 else 0)
    k = 0
    while k < n_arcs:
        amount = min(supply, demand)
        arc_i[k] = i
        arc_j[k] = j
        flow[k] = amount
        k += 1
        supply -= amount
        demand -= amount
        if supply == 0 and i < n0 - 1:
            i += 1
            supply = scale * n1 + 1
        if demand == 0 and j < n1 - 1:
            j += 1
            demand = scale * n0 + (n0 if j == n1 - 1 else 0)
    return arc_i, arc_j, flow


@njit(cache=True, nogil=True)
def _rebuild_tree(n0, n1, cost, arc_i, arc_j, parent, parent_arc, depth,
                  pot, order, deg, offs, adj_node, adj_arc):
    n_nodes = n0 + n1
    n_arcs = n_nodes - 1
    for v in range(n_nodes):
        deg[v] = 0
    for a in range(n_arcs):
        deg[arc_i[a]] += 1
        deg[n0 + arc_j[a]] += 1
    offs[0] = 0
    for v in range(n_nodes):
        offs[v + 1] = offs[v] + deg[v]
        deg[v] = offs[v]
    for a in range(n_arcs):
        u = arc_i[a]
        w = n0 + arc_j[a]
        adj_node[deg[u]] = w
        adj_arc[deg[u]] = a
        deg[u] += 1
        adj_node[deg[w]] = u
        adj_arc[deg[w]] = a
        deg[w] += 1

    parent[0] = -1
    parent_arc[0] = -1
    depth[0] = 0
    pot[0] = 0.0
    order[0] = 0
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        for p in range(offs[v], offs[v + 1]):
            w = adj_node[p]
            if w == parent[v]:
                continue
            a = adj_arc[p]
            parent[w] = v
            parent_arc[w] = a
            depth[w] = depth[v] + 1
            c = cost[arc_i[a], arc_j[a]]
            pot[w] = c - pot[v]
            order[tail] = w
            tail += 1
    return tail


@njit(cache=True, nogil=True)
def _unlink(v, parent, first_child, next_sib, prev_sib):
    p = parent[v]
    if prev_sib[v] >= 0:
        next_sib[prev_sib[v]] = next_sib[v]
    else:
        first_child[p] = next_sib[v]
    if next_sib[v] >= 0:
        prev_sib[next_sib[v]] = prev_sib[v]
    next_sib[v] = -1
    prev_sib[v] = -1


@njit(cache=True, nogil=True)
def _link(v, p, first_child, next_sib, prev_sib):
    head = first_child[p]
    next_sib[v] = head
    prev_sib[v] = -1
    if head >= 0:
        prev_sib[head] = v
    first_child[p] = v


@njit(cache=True, nogil=True)
def solve_transport(cost, arc_i, arc_j, flow, max_pivots, tol, block):
    """Run primal simplex pivots in place on the basis (arc_i, arc_j, flow).

    Returns (status, pivots). Potentials satisfy pot[i] + pot[n0 + j] = c_ij
    on basic arcs; an arc enters when its reduced cost is below -tol.
    """
    n0, n1 = cost.shape
    n_nodes = n0 + n1
    n_total = n0 * n1
    parent = np.empty(n_nodes, np.int64)
    parent_arc = np.empty(n_nodes, np.int64)
    depth = np.empty(n_nodes, np.int64)
    pot = np.empty(n_nodes, np.float64)
    order = np.empty(n_nodes, np.int64)
    deg = np.empty(n_nodes, np.int64)
    offs = np.empty(n_nodes + 1, np.int64)
    adj_node = np.empty(2 * (n_nodes - 1), np.int64)
    adj_arc = np.empty(2 * (n_nodes - 1), np.int64)

    reached = _rebuild_tree(n0, n1, cost, arc_i, arc_j, parent, parent_arc,
                            depth, pot, order, deg, offs, adj_node, adj_arc)
    if reached != n_nodes:
        raise ValueError("basis is not a spanning tree")
    first_child = np.full(n_nodes, -1, np.int64)
    next_sib = np.full(n_nodes, -1, np.int64)
    prev_sib = np.full(n_nodes, -1, np.int64)
    for v in range(1, n_nodes):
        _link(v, parent[v], first_child, next_sib, prev_sib)
    path = np.empty(n_nodes, np.int64)
    path_arc = np.empty(n_nodes, np.int64)
    stack = order  # reused as DFS stack

    cursor = 0
    pivots = 0
    while True:
        # block-search pricing
        best = -tol
        ent = -1
        scanned = 0
        while scanned < n_total:
            stop = min(scanned + block, n_total)
            while scanned < stop:
                e = cursor
                i = e // n1
                j = e - i * n1
                r = cost[i, j] - pot[i] - pot[n0 + j]
                if r < best:
                    best = r
                    ent = e
                cursor += 1
                if cursor == n_total:
                    cursor = 0
                scanned += 1
            if ent >= 0:
                break
        if ent < 0:
            return OPTIMAL, pivots
        if pivots >= max_pivots:
            return PIVOT_LIMIT, pivots

        ei = ent // n1
        ej = ent - ei * n1
        # Walk the cycle: the row side loses flow on arcs hanging below a row,
        # the column side on arcs hanging below a column.
        a = ei
        b = n0 + ej
        theta = np.int64(-1)
        leave_node = -1
        leave_on_row_side = True
        while a != b:
            if depth[a] >= depth[b]:
                if a < n0:
                    f = flow[parent_arc[a]]
                    if theta < 0 or f < theta:
                        theta = f
                        leave_node = a
                        leave_on_row_side = True
                a = parent[a]
            else:
                if b >= n0:
                    f = flow[parent_arc[b]]
                    if theta < 0 or f < theta:
                        theta = f
                        leave_node = b
                        leave_on_row_side = False
                b = parent[b]
        apex = a
        a = ei
        while a != apex:
            if a < n0:
                flow[parent_arc[a]] -= theta
            else:
                flow[parent_arc[a]] += theta
            a = parent[a]
        b = n0 + ej
        while b != apex:
            if b >= n0:
                flow[parent_arc[b]] -= theta
            else:
                flow[parent_arc[b]] += theta
            b = parent[b]
        slot = parent_arc[leave_node]
        arc_i[slot] = ei
        arc_j[slot] = ej
        flow[slot] = theta
        pivots += 1

        # Re-hang the subtree cut off below the leaving arc from the entering
        # endpoint that lies inside it.
        if leave_on_row_side:
            q = ei
            p = n0 + ej
        else:
            q = n0 + ej
            p = ei
        k = 0
        v = q
        while True:
            path[k] = v
            path_arc[k] = parent_arc[v]
            k += 1
            if v == leave_node:
                break
            v = parent[v]
        for t in range(k):
            _unlink(path[t], parent, first_child, next_sib, prev_sib)
        for t in range(k - 1, 0, -1):
            parent[path[t]] = path[t - 1]
            parent_arc[path[t]] = path_arc[t - 1]
            _link(path[t], path[t - 1], first_child, next_sib, prev_sib)
        parent[q] = p
        parent_arc[q] = slot
        _link(q, p, first_child, next_sib, prev_sib)

        top = 0
        stack[0] = q
        top = 1
        while top > 0:
            top -= 1
            v = stack[top]
            u = parent[v]
            depth[v] = depth[u] + 1
            ar = parent_arc[v]
            pot[v] = cost[arc_i[ar], arc_j[ar]] - pot[u]
            c = first_child[v]
            while c >= 0:
                stack[top] = c
                top += 1
                c = next_sib[c]
