"""Tree decompositions: exact treewidth, nice form, quantifier awareness, qaw.

The quantifier-aware width (qaw) of a pair is the least width+1 over tree
decompositions of its primal graph in which, for every block of quantified
vertices, the liberal neighbours of the block stay alive above the block's
interior. It is computed exactly by augmenting the primal graph per block and
taking exact treewidths of the augmented graphs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import CapExceeded, InternalInvariant, SharpqError
from .epquery import Graph, contract_graph, exists_components, primal_graph

# ---------------------------------------------------------------------------
# Decomposition types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeDecomposition:
    """Rooted tree of bags; exactly one node has parent None."""

    nodes: tuple
    parent: dict
    bags: dict

    @property
    def root(self):
        roots = [t for t in self.nodes if self.parent[t] is None]
        if len(roots) != 1:
            raise SharpqError(f"decomposition must have exactly one root, got {len(roots)}")
        return roots[0]

    @property
    def width(self):
        return max((len(self.bags[t]) for t in self.nodes), default=0) - 1

    def children(self):
        out = {t: [] for t in self.nodes}
        for t in self.nodes:
            p = self.parent[t]
            if p is not None:
                out[p].append(t)
        for t in out:
            out[t].sort()
        return out


@dataclass(frozen=True)
class NiceTreeDecomposition(TreeDecomposition):
    """Tree decomposition whose nodes are leaf/introduce/forget/join."""

    kinds: dict


def validate_td(td, g):
    """List of violated decomposition invariants (empty iff valid for g)."""
    problems = []
    seen = set(td.nodes)
    if len(seen) != len(td.nodes):
        problems.append("duplicate node ids")
    roots = [t for t in td.nodes if td.parent.get(t) is None]
    if len(roots) != 1:
        problems.append(f"expected one root, found {len(roots)}")
        return problems
    # reachability (tree-ness given single root and |E| = |V|-1 parent links)
    kids = td.children()
    reached = set()
    stack = [roots[0]]
    while stack:
        t = stack.pop()
        if t in reached:
            problems.append(f"cycle through node {t}")
            return problems
        reached.add(t)
        stack.extend(kids[t])
    if reached != seen:
        problems.append("nodes unreachable from the root")
    occurrences = {}
    for t in td.nodes:
        for v in td.bags[t]:
            occurrences.setdefault(v, set()).add(t)
    for v in sorted(g.vertices):
        if v not in occurrences:
            problems.append(f"vertex {v} is in no bag")
    for e in sorted(g.edges, key=sorted):
        if not any(e <= td.bags[t] for t in td.nodes):
            problems.append(f"edge {sorted(e)} is in no bag")
    # connectivity of each vertex's occurrence set
    for v, occ in sorted(occurrences.items()):
        stack = [min(occ)]
        comp = set()
        while stack:
            t = stack.pop()
            if t in comp:
                continue
            comp.add(t)
            for u in kids[t]:
                if u in occ:
                    stack.append(u)
            p = td.parent[t]
            if p is not None and p in occ:
                stack.append(p)
        if comp != occ:
            problems.append(f"occurrences of {v} are disconnected")
    return problems


def validate_nice(ntd, g):
    """validate_td plus the node-kind constraints of nice decompositions."""
    problems = validate_td(ntd, g)
    kids = ntd.children()
    for t in sorted(ntd.nodes):
        kind = ntd.kinds[t]
        bag = ntd.bags[t]
        cs = kids[t]
        if kind == "leaf":
            if cs or len(bag) > 1:
                problems.append(f"node {t}: bad leaf")
        elif kind == "introduce":
            if len(cs) != 1 or len(bag - ntd.bags[cs[0]]) != 1 or not ntd.bags[cs[0]] <= bag:
                problems.append(f"node {t}: bad introduce")
        elif kind == "forget":
            if len(cs) != 1 or len(ntd.bags[cs[0]] - bag) != 1 or not bag <= ntd.bags[cs[0]]:
                problems.append(f"node {t}: bad forget")
        elif kind == "join":
            if len(cs) != 2 or any(ntd.bags[c] != bag for c in cs):
                problems.append(f"node {t}: bad join")
        else:
            problems.append(f"node {t}: unknown kind {kind!r}")
    return problems


def serialize_td(td):
    """One line per node: `node <id> parent <id|none> kind <k|-> bag {..}`."""
    kinds = getattr(td, "kinds", {})
    lines = []
    for t in sorted(td.nodes):
        p = td.parent[t]
        k = kinds.get(t, "-")
        bag = ",".join(sorted(td.bags[t]))
        lines.append(f"node {t} parent {'none' if p is None else p} kind {k} bag {{{bag}}}")
    return "\n".join(lines) + "\n"


def _reroot(td, new_root):
    """Same decomposition rooted at new_root (parent links flipped on the path)."""
    parent = dict(td.parent)
    path = [new_root]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    for child, par in zip(path, path[1:]):
        parent[par] = child
    parent[new_root] = None
    return TreeDecomposition(nodes=td.nodes, parent=parent, bags=dict(td.bags))


def _relabel(td, start):
    """Copy of td with node ids start, start+1, ... (sorted-id order)."""
    mapping = {t: start + i for i, t in enumerate(sorted(td.nodes))}
    return TreeDecomposition(
        nodes=tuple(mapping[t] for t in sorted(td.nodes)),
        parent={mapping[t]: (None if td.parent[t] is None else mapping[td.parent[t]]) for t in td.nodes},
        bags={mapping[t]: td.bags[t] for t in td.nodes},
    )


def _graft(host, guest, at_node):
    """Attach guest (rooted) below host's node at_node; ids are made disjoint."""
    start = max(host.nodes) + 1
    guest = _relabel(guest, start)
    parent = dict(host.parent)
    parent.update(guest.parent)
    parent[guest.root] = at_node
    bags = dict(host.bags)
    bags.update(guest.bags)
    return TreeDecomposition(nodes=host.nodes + guest.nodes, parent=parent, bags=bags)


# ---------------------------------------------------------------------------
# Exact treewidth (branch-and-bound over elimination orders)
# ---------------------------------------------------------------------------


def _fill_neighbors(adj, v, elim):
    """Bitmask of live vertices adjacent to v in the graph where `elim` has
    been eliminated (i.e. reachable from v through eliminated vertices)."""
    seen = 1 << v
    stack = adj[v]
    result = 0
    while stack:
        u_bit = stack & -stack
        stack &= stack - 1
        if u_bit & seen:
            continue
        seen |= u_bit
        if u_bit & elim:
            stack |= adj[u_bit.bit_length() - 1] & ~seen
        else:
            result |= u_bit
    return result


def _greedy_min_fill(adj, n):
    """Upper bound: eliminate the vertex adding fewest fill edges."""
    elim = 0
    order = []
    width = 0
    for _ in range(n):
        live = [v for v in range(n) if not (1 << v) & elim]
        nbs = {v: _fill_neighbors(adj, v, elim) for v in live}

        def fill_count(v):
            total = 0
            m = nbs[v]
            while m:
                u = (m & -m).bit_length() - 1
                m &= m - 1
                total += (nbs[v] & ~nbs[u] & ~(1 << u)).bit_count()
            return total // 2

        best = min(live, key=lambda v: (fill_count(v), nbs[v].bit_count(), v))
        width = max(width, nbs[best].bit_count())
        order.append(best)
        elim |= 1 << best
    return width, order


def _degeneracy(adj, n):
    """Lower bound on treewidth: max over the removal process of min degree."""
    removed = 0
    best = 0
    for _ in range(n):
        live = [v for v in range(n) if not (1 << v) & removed]
        v = min(live, key=lambda u: ((adj[u] & ~removed).bit_count(), u))
        best = max(best, (adj[v] & ~removed).bit_count())
        removed |= 1 << v
    return best


def exact_treewidth(g, cap=24):
    """Exact treewidth and a witnessing decomposition.

    Solved per connected component (treewidth is the max over components;
    component decompositions are chained into one tree). Each component runs a
    branch-and-bound over elimination orders with memoization on the
    eliminated set (the filled graph depends only on the set), a greedy
    min-fill upper bound, a degeneracy lower bound, and the simplicial-vertex
    rule. Deterministic.
    """
    if len(g.vertices) > cap:
        raise CapExceeded(
            f"exact treewidth limited to {cap} vertices, got {len(g.vertices)}; "
            "no heuristic mode exists"
        )
    if not g.vertices:
        return -1, TreeDecomposition(nodes=(0,), parent={0: None}, bags={0: frozenset()})
    comps = g.connected_components()
    if len(comps) == 1:
        return _exact_treewidth_connected(g)
    width = -1
    combined = None
    for comp in comps:
        w, td = _exact_treewidth_connected(g.induced(comp))
        width = max(width, w)
        combined = td if combined is None else _graft(combined, td, combined.root)
    return width, combined


def _exact_treewidth_connected(g):
    verts = sorted(g.vertices)
    n = len(verts)
    index = {v: i for i, v in enumerate(verts)}
    adj = [0] * n
    for e in g.edges:
        a, b = sorted(e)
        adj[index[a]] |= 1 << index[b]
        adj[index[b]] |= 1 << index[a]
    full = (1 << n) - 1

    ub_width, ub_order = _greedy_min_fill(adj, n)
    lb = _degeneracy(adj, n)
    best_width, best_order = ub_width, ub_order

    if lb < best_width:
        memo = {}
        order_buf = []

        def dfs(elim, cur_width):
            nonlocal best_width, best_order
            if cur_width >= best_width:
                return
            if elim == full:
                best_width = cur_width
                best_order = list(order_buf)
                return
            prev = memo.get(elim)
            if prev is not None and prev <= cur_width:
                return
            memo[elim] = cur_width
            live = [v for v in range(n) if not (1 << v) & elim]
            nbs = {v: _fill_neighbors(adj, v, elim) for v in live}
            # a simplicial vertex may always be eliminated first
            for v in live:
                nb = nbs[v]
                if all(
                    nb & ~nbs[(m & -m).bit_length() - 1] & ~(m & -m) == 0
                    for m in _bits(nb)
                ):
                    order_buf.append(v)
                    dfs(elim | (1 << v), max(cur_width, nb.bit_count()))
                    order_buf.pop()
                    return
            if len(live) - 1 <= cur_width:
                # any completion keeps the width; take the deterministic one
                best_width = cur_width
                best_order = list(order_buf) + live
                return
            for v in sorted(live, key=lambda u: (nbs[u].bit_count(), u)):
                order_buf.append(v)
                dfs(elim | (1 << v), max(cur_width, nbs[v].bit_count()))
                order_buf.pop()

        dfs(0, lb)

    td = _td_from_order(adj, n, best_order, verts)
    return best_width, td


def _bits(mask):
    while mask:
        b = mask & -mask
        yield b
        mask &= mask - 1


def _td_from_order(adj, n, order, verts):
    """Standard decomposition from an elimination order: one node per vertex,
    bag = vertex + its live fill-neighbourhood at elimination time."""
    pos = {v: i for i, v in enumerate(order)}
    elim = 0
    bag_mask = {}
    for v in order:
        bag_mask[v] = _fill_neighbors(adj, v, elim) | (1 << v)
        elim |= 1 << v
    parent = {}
    for i, v in enumerate(order):
        later = [u for b in _bits(bag_mask[v] & ~(1 << v)) for u in [b.bit_length() - 1]]
        later = [u for u in later if pos[u] > pos[v]]
        if later:
            parent[pos[v]] = pos[min(later, key=lambda u: pos[u])]
        elif i + 1 < n:
            parent[pos[v]] = i + 1
        else:
            parent[pos[v]] = None
    bags = {
        pos[v]: frozenset(verts[b.bit_length() - 1] for b in _bits(bag_mask[v]))
        for v in order
    }
    return TreeDecomposition(nodes=tuple(range(n)), parent=parent, bags=bags)


# ---------------------------------------------------------------------------
# Nice form
# ---------------------------------------------------------------------------


def make_nice(td, root=None, force_empty_root=False, forget_priority=None):
    """Equivalent nice decomposition (same width, same graph coverage).

    `root` picks the node to root at; `force_empty_root` appends a forget
    chain so the root bag is empty; `forget_priority` orders multi-variable
    forget chains (a sort key on variables; default lexicographic).
    """
    if root is not None:
        td = _reroot(td, root)
    key = forget_priority if forget_priority is not None else lambda v: v
    kids = td.children()
    counter = itertools.count()
    nodes, parent, bags, kinds = [], {}, {}, {}

    def emit(kind, bag, children_ids):
        t = next(counter)
        nodes.append(t)
        bags[t] = frozenset(bag)
        kinds[t] = kind
        parent[t] = None
        for c in children_ids:
            parent[c] = t
        return t

    def chain_to(top_id, cur_bag, target_bag):
        for v in sorted(cur_bag - target_bag, key=key):
            cur_bag = cur_bag - {v}
            top_id = emit("forget", cur_bag, [top_id])
        for v in sorted(target_bag - cur_bag):
            cur_bag = cur_bag | {v}
            top_id = emit("introduce", cur_bag, [top_id])
        return top_id

    def build(t):
        target = td.bags[t]
        built = [chain_to(build(c), td.bags[c], target) for c in kids[t]]
        if not built:
            if not target:
                return emit("leaf", frozenset(), [])
            pivot = min(target)
            top = emit("leaf", {pivot}, [])
            return chain_to(top, frozenset({pivot}), target)
        node = built[0]
        for other in built[1:]:
            node = emit("join", target, [node, other])
        return node

    top = build(td.root)
    if force_empty_root:
        top = chain_to(top, td.bags[td.root], frozenset())
    return NiceTreeDecomposition(
        nodes=tuple(nodes), parent=parent, bags=bags, kinds=kinds
    )


# ---------------------------------------------------------------------------
# Quantifier awareness
# ---------------------------------------------------------------------------


def _tops_and_depths(td):
    kids = td.children()
    depth = {td.root: 0}
    stack = [td.root]
    order = []
    while stack:
        t = stack.pop()
        order.append(t)
        for c in kids[t]:
            depth[c] = depth[t] + 1
            stack.append(c)
    top = {}
    for t in order:
        for v in td.bags[t]:
            if v not in top or depth[t] < depth[top[v]]:
                top[v] = t
    return top, depth


def is_quantifier_aware(td, p):
    """Check the liberal-above-quantified condition for every block.

    For every block C of quantified vertices (with its adjacent liberal
    vertices), every liberal y ∈ C must have top(y) on the path from top(x) to
    the root for every quantified x ∈ C. Returns (True, None) or
    (False, (x, y, C)) for the first violation.
    """
    g = primal_graph(p)
    problems = validate_td(td, g)
    if problems:
        raise SharpqError(f"not a decomposition of the pair's primal graph: {problems[0]}")
    top, depth = _tops_and_depths(td)
    lib = p.liberal_set
    for comp in exists_components(p):
        for x in sorted(comp - lib):
            ancestors = set()
            t = top[x]
            while t is not None:
                ancestors.add(t)
                t = td.parent[t]
            for y in sorted(comp & lib):
                if top[y] not in ancestors:
                    return False, (x, y, comp)
    return True, None


# ---------------------------------------------------------------------------
# Quantifier-aware width
# ---------------------------------------------------------------------------


def _bfs_order(td):
    kids = td.children()
    out = [td.root]
    i = 0
    while i < len(out):
        out.extend(kids[out[i]])
        i += 1
    return out


def compute_qaw(p, cap=24):
    """Minimal quantifier-aware width and a witnessing nice decomposition.

    Per block C of quantified vertices: every other block is contracted
    (liberal part turned into a clique, interior deleted) and each choice of
    anchor x ∈ C's interior is tried, connecting x to C's liberal part and
    turning that part into a clique. Winning anchors are chosen independently
    per block (smallest augmented treewidth, then least variable); the primal
    graph augmented with all winning cliques has treewidth qaw−1. The witness
    glues exact decompositions of each block's augmented subgraph below an
    exact decomposition of the contract graph.
    """
    g = primal_graph(p)
    s = p.liberal_set
    comps = exists_components(p)
    if not comps:
        w, td = exact_treewidth(g, cap)
        nice = make_nice(td, force_empty_root=True)
        return w + 1, nice

    comps = sorted(comps, key=lambda c: sorted(c))
    winners = {}
    for comp in comps:
        boundary = comp & s
        base = g
        for other in comps:
            if other is comp:
                continue
            base = base.without_vertices(other - s).with_clique(sorted(other & s))
        best = None
        for x in sorted(comp - s):
            augmented = base.with_clique(sorted(boundary | {x}))
            w, _ = exact_treewidth(augmented, cap)
            if best is None or (w, x) < best:
                best = (w, x)
        winners[comp] = best[1]

    augmented_primal = g
    for comp in comps:
        augmented_primal = augmented_primal.with_clique(
            sorted((comp & s) | {winners[comp]})
        )
    qaw_width, _ = exact_treewidth(augmented_primal, cap)
    qaw = qaw_width + 1

    # witness: contract-graph spine with one block region grafted per block
    _, spine = exact_treewidth(contract_graph(p), cap)
    assembled = _relabel(spine, 0)
    spine_nodes = set(assembled.nodes)
    spine_root = assembled.root
    for comp in comps:
        boundary = comp & s
        anchor = winners[comp]
        region_graph = g.induced(comp).with_clique(sorted(boundary | {anchor}))
        _, region = exact_treewidth(region_graph, cap)
        hook = boundary | {anchor}
        r_star = min(t for t in region.nodes if hook <= region.bags[t])
        region = _reroot(region, r_star)
        t_star = next(
            t for t in _bfs_order(assembled)
            if t in spine_nodes and boundary <= assembled.bags[t]
        )
        assembled = _graft(assembled, region, t_star)

    quantified = set(p.struct.universe) - s
    nice = make_nice(
        assembled,
        root=spine_root,
        force_empty_root=True,
        forget_priority=lambda v: (0 if v in quantified else 1, v),
    )
    if nice.width + 1 != qaw:
        raise InternalInvariant(
            f"witness decomposition width {nice.width + 1} != computed qaw {qaw}"
        )
    ok, violation = is_quantifier_aware(nice, p)
    if not ok:
        raise InternalInvariant(f"witness decomposition is not quantifier-aware: {violation}")
    return qaw, nice


def qaw_bounds(p, cap=24):
    """(max(tw, tw(contract))+1, tw + tw(contract) + 1) sandwich for qaw."""
    tw_primal, _ = exact_treewidth(primal_graph(p), cap)
    tw_contract, _ = exact_treewidth(contract_graph(p), cap)
    return max(tw_primal, tw_contract) + 1, tw_primal + tw_contract + 1
