"""Subsystems, invariant sets and their sheaf and cosheaf."""

from itertools import combinations, product
from loguru import logger
import networkx as nx
import numpy as np
from dsem_sheaf._formats_and_types import (
    DsemDag,
    DsemSheafError,
    DsemSpec,
    NotInvariant,
    NotSurjective,
    SubsystemProjection,
    TooLarge,
)
from dsem_sheaf._dsem import _require_numeric, cross_edges, self_edges
from dsem_sheaf._topology import Poset, RestrictionMap, SheafDiagram, Stalk

MAX_STATES = 12
MAX_IN_CLOSED = 2 ** 16


def dsem_dag(spec: DsemSpec) -> DsemDag:
    """The variable-level graph of a DSEM with lags dropped.

    Strongly connected components (feedback loops) are collapsed into a
    single vertex named by joining the members with "+".
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(spec.variables)
    graph.add_edges_from((e.source, e.target) for e in cross_edges(spec))
    condensed = nx.condensation(graph)
    names, members = {}, {}
    for node, data in condensed.nodes(data=True):
        comp = [v for v in spec.variables if v in data["members"]]
        names[node] = "+".join(comp)
        members[names[node]] = frozenset(comp)
    dag = nx.relabel_nodes(condensed, names)
    if len(members) < len(spec.variables):
        logger.info("Collapsed feedback loops into {}.",
                    [k for k, v in members.items() if len(v) > 1])
    return DsemDag(graph=dag, members=members)


def in_closed_sets(dag: DsemDag, cap: int = MAX_IN_CLOSED) -> list:
    """All in-closed sets of variables, smallest first.

    Every antichain of the reachability order generates the in-closed set
    of its members and their ancestors, and every in-closed set arises
    from exactly one antichain (its maximal elements).
    """
    graph = dag.graph
    sets = []
    for antichain in nx.antichains(graph):
        if len(sets) >= cap:
            raise TooLarge("More than %d in-closed sets." % cap)
        vertices = set(antichain)
        for v in antichain:
            vertices |= nx.ancestors(graph, v)
        sets.append(frozenset().union(*[dag.members[v] for v in vertices]))
    return sorted(sets, key=lambda s: (len(s), sorted(s)))


def set_label(variables) -> str:
    return "{%s}" % ",".join(sorted(variables))


def window_size(spec: DsemSpec) -> int:
    return max(list(spec.lags) + list(spec.ar_orders.values()) + [1])


def _coordinates(variables, members, w):
    return [(v, j) for v in variables if v in members for j in range(w)]


def subsystem_update(spec: DsemSpec, members, window: int = None):
    """Update matrix of a subsystem's state window.

    The window of each member holds x(t), x(t-1), ..., x(t-w+1). The
    update computes x(t+1) from the DSEM recurrence (lag-0 parents in
    topological order) and shifts the older entries down.
    """
    _require_numeric(spec)
    w = window or window_size(spec)
    coords = _coordinates(spec.variables, members, w)
    index = {c: i for i, c in enumerate(coords)}
    U = np.zeros((len(coords), len(coords)))
    instant = nx.DiGraph()
    instant.add_nodes_from(v for v in spec.variables if v in members)
    instant.add_edges_from((e.source, e.target) for e in cross_edges(spec)
                           if e.lag == 0 and e.target in members
                           and e.source in members)
    new = {}
    for v in nx.lexicographical_topological_sort(instant):
        row = np.zeros(len(coords))
        own = self_edges(spec, v)
        if not own:
            row[index[(v, 0)]] += 1.0
        for e in own + cross_edges(spec, v):
            if e.source not in members:
                raise DsemSheafError(
                    "`%s` is not in-closed: it misses `%s`."
                    % (set_label(members), e.source))
            if e.lag == 0:
                row += spec.h * e.coefficient * new[e.source]
            else:
                if e.lag > w:
                    raise DsemSheafError("Window %d is shorter than lag %d."
                                         % (w, e.lag))
                row[index[(e.source, e.lag - 1)]] += spec.h * e.coefficient
        new[v] = row
    for (v, j), i in index.items():
        if j == 0:
            U[i] = new[v]
        else:
            U[i, index[(v, j - 1)]] = 1.0
    return U


def subsystem_sheaf_from_dag(
    dag: DsemDag,
    dynamics: DsemSpec = None,
    window: int = None,
    cap: int = MAX_IN_CLOSED,
) -> SheafDiagram:
    """The sheaf of subsystems given by the in-closed sets of a DSEM.

    Cells are the nonempty in-closed sets; a larger set lies below every
    subset it contains and restricts to it by dropping coordinates. With
    `dynamics`, every cell records its update matrix in `info["update"]`
    and the residuals of the squares projection o update = update o
    projection are recorded in `provenance["commuting"]`.
    """
    sets = [s for s in in_closed_sets(dag, cap) if s]
    variables = (list(dynamics.variables) if dynamics is not None
                 else sorted(set().union(*dag.members.values())))
    w = window or (window_size(dynamics) if dynamics is not None else 1)
    labels = {s: set_label(s) for s in sets}
    relations = [(labels[a], labels[b]) for a in sets for b in sets
                 if b < a]
    poset = Poset([labels[s] for s in sets], relations)
    coords = {s: _coordinates(variables, s, w) for s in sets}
    by_label = {labels[s]: s for s in sets}
    stalks = {
        labels[s]: Stalk(len(coords[s]), 1.0,
                         tuple("%s[t-%d]" % c for c in coords[s]))
        for s in sets
    }
    maps = {}
    for lo, up in poset.hasse.edges:
        source = coords[by_label[lo]]
        keep = [source.index(c) for c in coords[by_label[up]]]
        maps[(lo, up)] = RestrictionMap(
            len(source), len(keep), "projection", np.eye(len(source))[keep])
    info = {labels[s]: {"kind": "subsystem", "size": len(s)} for s in sets}
    commuting = {}
    if dynamics is not None:
        for s in sets:
            info[labels[s]]["update"] = subsystem_update(dynamics, s, w)
        for (lo, up), rmap in maps.items():
            P = rmap.matrix
            commuting[(lo, up)] = float(np.abs(
                P @ info[lo]["update"] - info[up]["update"] @ P).max(
                    initial=0.0))
        worst = max(commuting.values(), default=0.0)
        if worst > 1e-10:
            logger.warning("Subsystem updates do not commute with the "
                           "projections (residual {:.3g}).", worst)
    logger.info("Subsystem sheaf with {} cells.", len(sets))
    return SheafDiagram(poset, stalks, maps, info=info,
                        provenance={"commuting": commuting, "window": w,
                                    "variables": variables})


def commuting_residuals(sheaf: SheafDiagram, samples: int = 10,
                        seed: int = 0) -> dict:
    """Evaluate projection o update - update o projection on random states."""
    rng = np.random.default_rng(seed)
    out = {}
    for lo, up in sheaf.poset.comparable_pairs():
        R = sheaf.restriction(lo, up)
        U_lo, U_up = sheaf.info[lo]["update"], sheaf.info[up]["update"]
        worst = 0.0
        for _ in range(samples):
            x = rng.normal(size=sheaf.dim(lo))
            worst = max(worst, float(
                np.abs(R(U_lo @ x) - U_up @ R(x)).max(initial=0.0)))
        out[(lo, up)] = worst
    return out


class FiniteDyn(object):
    """A map of a small finite set to itself, stored as a table."""

    def __init__(self, states, table, bound: int = MAX_STATES):
        self.states = tuple(states)
        if len(self.states) > bound:
            raise TooLarge("%d states exceed the bound of %d."
                           % (len(self.states), bound))
        self.table = dict(table)
        missing = [s for s in self.states if s not in self.table]
        if missing:
            raise DsemSheafError("The map is not defined on %s." % missing[:3])
        outside = [s for s in self.states if self.table[s] not in self.table]
        if outside:
            raise DsemSheafError("The map leaves the state set at %s."
                                 % outside[:3])
        self.bound = bound
        self.bijective = len(set(self.table.values())) == len(self.states)

    @classmethod
    def from_function(cls, states, f, bound: int = MAX_STATES):
        states = list(states)
        return cls(states, {s: f(s) for s in states}, bound)

    def __call__(self, state):
        return self.table[state]

    def __len__(self):
        return len(self.states)

    def image(self, subset) -> frozenset:
        return frozenset(self.table[s] for s in subset)

    def orbit_closure(self, state) -> frozenset:
        seen = [state]
        while self.table[seen[-1]] not in seen:
            seen.append(self.table[seen[-1]])
        return frozenset(seen)

    def restrict(self, subset):
        """The map restricted to an invariant subset."""
        if not self.image(subset) <= frozenset(subset):
            raise NotInvariant("The subset is not invariant.")
        return FiniteDyn(subset, {s: self.table[s] for s in subset},
                         self.bound)


def table_dynamics(spec: DsemSpec, modulus: int = 3,
                   bound: int = 3 ** 3) -> FiniteDyn:
    """DSEM update as a table on integer states modulo `modulus`.

    Coefficients must be integers; states are tuples indexed like the
    window coordinates of all variables.
    """
    U = subsystem_update(spec, frozenset(spec.variables))
    if not np.allclose(U, np.round(U)):
        raise DsemSheafError("Table dynamics need integer coefficients.")
    U = np.round(U).astype(int)
    states = list(product(range(modulus), repeat=U.shape[0]))
    return FiniteDyn.from_function(
        states, lambda s: tuple(int(x) for x in (U @ np.array(s)) % modulus),
        bound)


def projection_table(spec: DsemSpec, members, states) -> dict:
    """Project window states of all variables onto those of `members`."""
    w = window_size(spec)
    full = _coordinates(spec.variables, frozenset(spec.variables), w)
    keep = [full.index(c) for c in _coordinates(spec.variables, members, w)]
    return {s: tuple(s[i] for i in keep) for s in states}


def check_subsystem(f: FiniteDyn, p: dict, codomain=None) -> SubsystemProjection:
    """Find g with p o f = g o p, or a pair of states showing there is none."""
    image = set(p[s] for s in f.states)
    if codomain is not None:
        outside = image - set(codomain)
        if outside or set(codomain) - image:
            raise NotSurjective(
                "`p` does not map the states onto the given codomain.")
    codomain = tuple(codomain) if codomain is not None else tuple(
        sorted(image, key=repr))
    g, seen = {}, {}
    for s in f.states:
        b, gb = p[s], p[f(s)]
        if b in g and g[b] != gb:
            return SubsystemProjection(p, codomain, None, (seen[b], s))
        g[b] = gb
        seen[b] = s
    return SubsystemProjection(p, codomain, g, None)


def invariant_sets(f: FiniteDyn) -> list:
    """All invariant sets of f, as unions of forward orbit closures."""
    if len(f) > f.bound:
        raise TooLarge("Too many states for brute force.")
    closures = set(f.orbit_closure(s) for s in f.states)
    sets = {frozenset()}
    for c in closures:
        sets |= {u | c for u in sets}
    return sorted(sets, key=lambda s: (len(s), sorted(map(repr, s))))


class InvariantCosheaf(object):
    """The cosheaf of invariant sets of a finite dynamical system.

    Costalks are the invariant sets themselves and extensions the
    inclusions, over the inclusion order of the invariant sets.
    """

    def __init__(self, f: FiniteDyn):
        self.dyn = f
        self.sets = invariant_sets(f)
        ids = {s: i for i, s in enumerate(self.sets)}
        self.poset = Poset(
            list(ids.values()),
            [(ids[a], ids[b]) for a in self.sets for b in self.sets if a < b])

    def costalk(self, V) -> frozenset:
        return frozenset(V)

    def extension(self, U, V) -> dict:
        if not frozenset(U) <= frozenset(V):
            raise DsemSheafError("Extensions need U to be a subset of V.")
        return {x: x for x in U}

    def glue(self, cover) -> list:
        """Glue the costalks of a cover along the costalks of overlaps.

        Returns the classes of the disjoint union of the costalks, two
        copies of a point being identified when the point lies in both.
        """
        cover = [frozenset(U) for U in cover]
        graph = nx.Graph()
        for i, U in enumerate(cover):
            graph.add_nodes_from((i, x) for x in U)
        for (i, U), (j, V) in combinations(enumerate(cover), 2):
            graph.add_edges_from(((i, x), (j, x)) for x in U & V)
        return [frozenset(c) for c in nx.connected_components(graph)]

    def check_gluing(self, V, cover) -> bool:
        classes = self.glue(cover)
        points = [frozenset(x for _, x in c) for c in classes]
        return (len(classes) == len(V)
                and all(len(p) == 1 for p in points)
                and frozenset().union(*points) == frozenset(V))

    def covers(self, V, max_cover: int = 2):
        """Covers of V by nonempty invariant subsets.

        With `max_cover` None every irredundant cover is produced, that is
        every cover in which each member holds a point no other member
        holds.
        """
        V = frozenset(V)
        inside = [U for U in self.sets if U and U <= V]
        if max_cover is not None:
            for k in range(1, max_cover + 1):
                for cover in combinations(inside, k):
                    if frozenset().union(*cover) == V:
                        yield cover
            return
        yield from self._irredundant(V, inside, 0, [], frozenset())

    def _irredundant(self, V, inside, start, chosen, covered):
        if covered == V:
            yield tuple(chosen)
            return
        for i in range(start, len(inside)):
            U = inside[i]
            if U <= covered:
                continue
            cover = chosen + [U]
            if all(W - frozenset().union(*(X for X in cover if X != W))
                   for W in cover):
                yield from self._irredundant(V, inside, i + 1, cover,
                                             covered | U)

    def check_all_gluings(self, max_cover: int = 2) -> list:
        """Covers that fail to glue back.

        Covers have at most `max_cover` members, or are all irredundant
        covers when it is None.
        """
        return [(V, cover) for V in self.sets
                for cover in self.covers(V, max_cover)
                if not self.check_gluing(V, cover)]

    def check_endomorphism(self) -> bool:
        """f maps each costalk to itself and commutes with the extensions."""
        f = self.dyn
        for V in self.sets:
            if not f.image(V) <= V:
                return False
            for U in self.sets:
                if U <= V:
                    ext = self.extension(U, V)
                    if any(ext[f(x)] != f(ext[x]) for x in U):
                        return False
        return True


def cosheaf_of_invariants(f: FiniteDyn) -> InvariantCosheaf:
    return InvariantCosheaf(f)


def _table(g):
    return g.g if isinstance(g, SubsystemProjection) else dict(g)


def pullback_invariant(f: FiniteDyn, p: dict, g, V) -> frozenset:
    """The preimage under p of an invariant set of g, itself invariant."""
    g = _table(g)
    V = frozenset(V)
    if any(g[b] not in V for b in V):
        raise NotInvariant("The set is not invariant under `g`.")
    pre = frozenset(s for s in f.states if p[s] in V)
    if not f.image(pre) <= pre:
        raise NotInvariant("The preimage is not invariant; (g, p) is not "
                           "a subsystem of f.")
    return pre


def subsystem_meet(f: FiniteDyn, first: SubsystemProjection,
                   second: SubsystemProjection) -> SubsystemProjection:
    """The meet of two subsystems through the pushout of their codomains.

    Points of the two codomains are identified whenever they are images of
    the same state; classes are numbered by first appearance.
    """
    if first.g is None or second.g is None:
        raise DsemSheafError("Both projections must be verified subsystems.")
    graph = nx.Graph()
    graph.add_nodes_from((1, b) for b in first.codomain)
    graph.add_nodes_from((2, b) for b in second.codomain)
    graph.add_edges_from(((1, first.p[s]), (2, second.p[s]))
                         for s in f.states)
    label = {}
    order = [(1, b) for b in first.codomain] + [(2, b) for b in second.codomain]
    components = sorted(nx.connected_components(graph),
                        key=lambda c: min(order.index(n) for n in c))
    for k, comp in enumerate(components):
        for node in comp:
            label[node] = k
    p3 = {s: label[(1, first.p[s])] for s in f.states}
    g3 = {}
    for (side, b), k in label.items():
        g = first.g if side == 1 else second.g
        gk = label[(side, g[b])]
        if g3.setdefault(k, gk) != gk:
            raise DsemSheafError("The pushout map is not well defined.")
    for s in f.states:
        if p3[f(s)] != g3[p3[s]]:
            raise DsemSheafError("The meet does not commute with f.")
    return SubsystemProjection(p3, tuple(sorted(set(label.values()))), g3)


def is_conjugacy(f1: FiniteDyn, f2: FiniteDyn, h: dict) -> bool:
    """Check that h is a bijection with h o f1 = f2 o h."""
    if sorted(map(repr, (h[s] for s in f1.states))) != sorted(
            map(repr, f2.states)):
        return False
    return all(h[f1(s)] == f2(h[s]) for s in f1.states)
