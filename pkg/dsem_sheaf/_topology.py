"""Finite posets, sheaf diagrams and the consistency radius."""

from collections import namedtuple
import networkx as nx
import numpy as np
from dsem_sheaf._formats_and_types import (
    DimensionMismatch,
    FunctorialityViolation,
    InvalidNetlist,
    NotGlobal,
    PairResidual,
    UnknownCell,
)

Stalk = namedtuple("Stalk", ["dim", "weight", "labels"])
Stalk.__new__.__defaults__ = (1.0, None)


class Poset(object):
    """A finite poset given by covering relations `(lower, upper)`.

    Cycles in the relation are collapsed into single cells whose id joins
    the member ids with "+".
    """

    def __init__(self, cells, relations=(), labels=None):
        cells = list(dict.fromkeys(cells))
        graph = nx.DiGraph()
        graph.add_nodes_from(cells)
        graph.add_edges_from(relations)
        unknown = set(graph.nodes) - set(cells)
        if unknown:
            raise UnknownCell("Relations mention undeclared cells %s."
                              % sorted(map(str, unknown)))
        self._cell_of = {c: c for c in cells}
        self.members = {c: frozenset([c]) for c in cells}
        if not nx.is_directed_acyclic_graph(graph):
            graph, cells = self._condense(graph, cells)
        self.cells = tuple(cells)
        self._index = {c: i for i, c in enumerate(self.cells)}
        self.hasse = nx.transitive_reduction(graph)
        self.hasse.add_nodes_from(self.cells)
        self._up = {c: frozenset(nx.descendants(graph, c)) | {c}
                    for c in self.cells}
        self.labels = {c: c for c in self.cells}
        self.labels.update(labels or {})

    def _condense(self, graph, cells):
        components = list(nx.strongly_connected_components(graph))
        name = {}
        for comp in components:
            cid = "+".join(sorted(map(str, comp))) if len(comp) > 1 else \
                next(iter(comp))
            for c in comp:
                name[c] = cid
                self._cell_of[c] = cid
            self.members[cid] = frozenset(comp)
        for c in list(self.members):
            if c not in name.values():
                del self.members[c]
        condensed = nx.DiGraph()
        ordered = list(dict.fromkeys(name[c] for c in cells))
        condensed.add_nodes_from(ordered)
        condensed.add_edges_from(
            (name[u], name[v]) for u, v in graph.edges if name[u] != name[v])
        return condensed, ordered

    def cell_of(self, original):
        """The (possibly condensed) cell containing an original cell."""
        try:
            return self._cell_of[original]
        except KeyError:
            raise UnknownCell("Unknown cell `%s`." % (original,))

    def __contains__(self, cell):
        return cell in self._up

    def __len__(self):
        return len(self.cells)

    def _check(self, cell):
        if cell not in self._up:
            raise UnknownCell("Unknown cell `%s`." % (cell,))

    def up_set(self, cell) -> frozenset:
        """All cells above `cell`, including itself."""
        self._check(cell)
        return self._up[cell]

    def down_set(self, cell) -> frozenset:
        self._check(cell)
        return frozenset(c for c in self.cells if cell in self._up[c])

    def leq(self, a, b) -> bool:
        self._check(a)
        self._check(b)
        return b in self._up[a]

    def open_set(self, cells) -> frozenset:
        """Smallest open set of the Alexandrov topology containing `cells`."""
        out = set()
        for c in cells:
            out |= self.up_set(c)
        return frozenset(out)

    def comparable_pairs(self, hasse_only=False) -> list:
        """All pairs `lower < upper`, in cell order."""
        if hasse_only:
            pairs = list(self.hasse.edges)
        else:
            pairs = [(a, b) for a in self.cells for b in self._up[a] if b != a]
        return sorted(pairs, key=lambda p: (self._index[p[0]],
                                            self._index[p[1]]))

    def chains(self) -> list:
        """All triples a < b < c."""
        return [(a, b, c) for a, b in self.comparable_pairs()
                for c in self._up[b] if c != b]

    def minimal(self) -> list:
        return [c for c in self.cells if self.hasse.in_degree(c) == 0]

    def maximal(self) -> list:
        return [c for c in self.cells if self.hasse.out_degree(c) == 0]


class RestrictionMap(object):
    """A map from the stalk of a lower cell to the stalk of an upper cell.

    `kind` is one of "projection", "affine" or "general". Jacobians are
    exact for the first two and taken from `jac` (or central differences)
    for general maps.
    """

    def __init__(self, source_dim, target_dim, kind="affine", matrix=None,
                 offset=None, func=None, jac=None, step=1e-6):
        self.source_dim = int(source_dim)
        self.target_dim = int(target_dim)
        self.kind = kind
        self.func = func
        self.jac = jac
        self.step = step
        if kind in ("projection", "affine"):
            self.matrix = np.asarray(matrix, dtype=float).reshape(
                self.target_dim, self.source_dim)
            self.offset = (np.zeros(self.target_dim) if offset is None
                           else np.asarray(offset, dtype=float))
        elif func is None:
            raise ValueError("General restriction maps need a `func`.")

    @classmethod
    def projection(cls, source_dim, start, stop):
        """Select the coordinates `start:stop`."""
        return cls(source_dim, stop - start, "projection",
                   np.eye(source_dim)[start:stop])

    @classmethod
    def identity(cls, dim):
        return cls(dim, dim, "projection", np.eye(dim))

    @classmethod
    def from_function(cls, fn):
        """Wrap an `IOFunction` of a part."""
        if fn.affine is not None:
            return cls(fn.offsets[-1], fn.output_dim, "affine",
                       fn.affine[0], fn.affine[1])
        return cls(fn.offsets[-1], fn.output_dim, "general", func=fn,
                   jac=fn.jacobian)

    @property
    def is_affine(self):
        return self.kind in ("projection", "affine")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_affine:
            return self.matrix @ v + self.offset
        return np.asarray(self.func(v), dtype=float).reshape(self.target_dim)

    def jacobian(self, v):
        if self.is_affine:
            return self.matrix
        v = np.asarray(v, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(v), dtype=float).reshape(
                self.target_dim, self.source_dim)
        J = np.zeros((self.target_dim, self.source_dim))
        for i in range(self.source_dim):
            dv = np.zeros(self.source_dim)
            dv[i] = self.step
            J[:, i] = (self(v + dv) - self(v - dv)) / (2 * self.step)
        return J

    def to_json(self):
        out = {"kind": self.kind, "source_dim": self.source_dim,
               "target_dim": self.target_dim}
        if self.is_affine:
            out["matrix"] = self.matrix.tolist()
            out["offset"] = self.offset.tolist()
        return out


def compose(outer: RestrictionMap, inner: RestrictionMap) -> RestrictionMap:
    """The map `outer o inner`."""
    if outer.source_dim != inner.target_dim:
        raise DimensionMismatch("Cannot compose maps of dimensions %d and %d."
                                % (outer.source_dim, inner.target_dim))
    if outer.is_affine and inner.is_affine:
        kind = ("projection" if outer.kind == inner.kind == "projection"
                else "affine")
        return RestrictionMap(
            inner.source_dim, outer.target_dim, kind,
            outer.matrix @ inner.matrix,
            outer.matrix @ inner.offset + outer.offset,
        )
    return RestrictionMap(
        inner.source_dim,
        outer.target_dim,
        "general",
        func=lambda v: outer(inner(v)),
        jac=lambda v: outer.jacobian(inner(v)) @ inner.jacobian(v),
    )


class SheafDiagram(object):
    """Stalks on the cells of a poset and restriction maps between them.

    Maps are stored for covering pairs (and optionally for other
    comparable pairs); the remaining ones are composed along the Hasse
    diagram on demand. `info` holds per-cell metadata such as the
    variable and time an observation cell refers to. The poset must be
    acyclic: condensed cycles have no stalk.
    """

    def __init__(self, poset, stalks, restrictions, p=2.0, info=None,
                 provenance=None):
        cycles = [m for m in poset.members.values() if len(m) > 1]
        if cycles:
            raise InvalidNetlist(
                "Cells %s form a cycle; a sheaf diagram needs an acyclic "
                "order." % ", ".join("`%s`" % c for c in sorted(
                    map(str, cycles[0]))))
        self.poset = poset
        self.stalks = {}
        for c in poset.cells:
            if c not in stalks:
                raise UnknownCell("Cell `%s` has no stalk." % (c,))
            s = stalks[c]
            self.stalks[c] = s if isinstance(s, Stalk) else Stalk(int(s))
        if p < 1:
            raise ValueError("The norm exponent `p` must be >= 1.")
        self.p = float(p)
        self._maps = {}
        for (lo, up), rmap in restrictions.items():
            if not poset.leq(lo, up) or lo == up:
                raise UnknownCell("No relation `%s <= %s` for a restriction."
                                  % (lo, up))
            if (rmap.source_dim, rmap.target_dim) != (self.dim(lo),
                                                      self.dim(up)):
                raise DimensionMismatch(
                    "Map `%s -> %s` is %dx%d but the stalks are %d and %d."
                    % (lo, up, rmap.target_dim, rmap.source_dim,
                       self.dim(up), self.dim(lo)))
            self._maps[(lo, up)] = rmap
        for lo, up in poset.hasse.edges:
            if (lo, up) not in self._maps:
                raise UnknownCell("Covering pair `%s <= %s` has no map."
                                  % (lo, up))
        self._composed = {}
        self.info = {c: dict(i) for c, i in (info or {}).items()}
        self.provenance = dict(provenance or {})

    @property
    def cells(self):
        return self.poset.cells

    def dim(self, cell):
        return self.stalks[cell].dim

    def weight(self, cell):
        return self.stalks[cell].weight

    @property
    def stored(self):
        return dict(self._maps)

    def restriction(self, lower, upper) -> RestrictionMap:
        """The map for `lower <= upper`, composing along the Hasse diagram."""
        if lower == upper:
            return RestrictionMap.identity(self.dim(lower))
        if (lower, upper) in self._maps:
            return self._maps[(lower, upper)]
        if (lower, upper) not in self._composed:
            try:
                path = nx.shortest_path(self.poset.hasse, lower, upper)
            except nx.NetworkXNoPath:
                raise UnknownCell("`%s` and `%s` are not comparable."
                                  % (lower, upper))
            rmap = self._maps[(path[0], path[1])]
            for a, b in zip(path[1:-1], path[2:]):
                rmap = compose(self._maps[(a, b)], rmap)
            self._composed[(lower, upper)] = rmap
        return self._composed[(lower, upper)]

    def pairs(self, hasse_only=False):
        return self.poset.comparable_pairs(hasse_only)

    def __repr__(self):
        return "<SheafDiagram: %d cells, %d covering pairs>" % (
            len(self.cells), self.poset.hasse.number_of_edges())


class Assignment(object):
    """Values on some cells of a sheaf diagram; global when total."""

    def __init__(self, sheaf, values):
        self.sheaf = sheaf
        self.values = {}
        for cell, value in values.items():
            if cell not in sheaf.poset:
                raise UnknownCell("Unknown cell `%s`." % (cell,))
            value = np.array(value, dtype=float).reshape(-1)
            if value.shape[0] != sheaf.dim(cell):
                raise DimensionMismatch(
                    "Value for `%s` has length %d, the stalk has dimension "
                    "%d." % (cell, value.shape[0], sheaf.dim(cell)))
            value.setflags(write=False)
            self.values[cell] = value

    @property
    def support(self):
        return frozenset(self.values)

    @property
    def is_global(self):
        return len(self.values) == len(self.sheaf.cells)

    def __getitem__(self, cell):
        return self.values[cell]

    def __contains__(self, cell):
        return cell in self.values

    def updated(self, values):
        """A new assignment with some values replaced or added."""
        merged = dict(self.values)
        merged.update(values)
        return Assignment(self.sheaf, merged)


def _pair_terms(sheaf, assignment, pairs, weights):
    if not assignment.is_global:
        missing = set(sheaf.cells) - assignment.support
        raise NotGlobal("The assignment misses %d cells (e.g. `%s`)."
                        % (len(missing), sorted(map(str, missing))[0]))
    weights = weights or {}
    for lo, up in pairs:
        alpha = weights.get(up, sheaf.weight(up))
        diff = assignment[up] - sheaf.restriction(lo, up)(assignment[lo])
        yield lo, up, alpha ** sheaf.p * np.abs(diff) ** sheaf.p


def consistency_radius(sheaf, assignment, weights=None, hasse_only=False):
    """The weighted p-norm of all restriction disagreements."""
    total = sum(
        t.sum() for *_, t in _pair_terms(
            sheaf, assignment, sheaf.pairs(hasse_only), weights))
    return float(total ** (1.0 / sheaf.p))


def local_consistency_radius(sheaf, assignment, cells, weights=None,
                             hasse_only=False):
    """Consistency radius over the open set generated by `cells`."""
    U = sheaf.poset.open_set(cells)
    pairs = [(lo, up) for lo, up in sheaf.pairs(hasse_only)
             if lo in U and up in U]
    total = sum(t.sum() for *_, t in _pair_terms(
        sheaf, assignment, pairs, weights))
    return float(total ** (1.0 / sheaf.p))


def residual_breakdown(sheaf, assignment, weights=None, hasse_only=False):
    """Per-pair p-th power contributions, largest first."""
    terms = [
        PairResidual(lo, up, float(t.sum()), t)
        for lo, up, t in _pair_terms(
            sheaf, assignment, sheaf.pairs(hasse_only), weights)
    ]
    return sorted(terms, key=lambda r: -r.contribution)


def is_section(sheaf, assignment, tol=1e-9) -> bool:
    """Check whether the consistency radius is below `tol`."""
    return consistency_radius(sheaf, assignment) <= tol


def section_from(sheaf, cell, value) -> Assignment:
    """Push a value on `cell` to every cell above it."""
    return Assignment(sheaf, {
        up: sheaf.restriction(cell, up)(value)
        for up in sheaf.poset.up_set(cell)
    })


def check_functoriality(sheaf, sample_count=5, tol=1e-9, seed=0) -> list:
    """Compare composed and direct maps on random vectors for every chain."""
    rng = np.random.default_rng(seed)
    violations = []
    for a, b, c in sheaf.poset.chains():
        direct = sheaf.restriction(a, c)
        first, second = sheaf.restriction(a, b), sheaf.restriction(b, c)
        worst = 0.0
        for _ in range(sample_count):
            v = rng.normal(size=sheaf.dim(a))
            worst = max(worst, float(
                np.abs(second(first(v)) - direct(v)).max(initial=0.0)))
        if worst > tol:
            violations.append(FunctorialityViolation(a, b, c, worst))
    return violations


def sheaf_to_json(sheaf) -> dict:
    """Serialize cells, covering pairs, stalks and affine maps."""
    return {
        "p": sheaf.p,
        "cells": [
            {"id": c, "label": str(sheaf.poset.labels[c]), "dim": s.dim,
             "weight": s.weight, "labels": s.labels,
             "info": {k: v for k, v in sheaf.info.get(c, {}).items()
                      if isinstance(v, (str, int, float))}}
            for c, s in sheaf.stalks.items()
        ],
        "hasse": [list(e) for e in sheaf.poset.comparable_pairs(True)],
        "maps": [
            dict(lower=lo, upper=up, **rmap.to_json())
            for (lo, up), rmap in sheaf.stored.items()
        ],
    }


def assignment_to_json(assignment) -> dict:
    return {c: v.tolist() for c, v in assignment.values.items()}


def assignment_from_json(sheaf, data) -> Assignment:
    return Assignment(sheaf, {c: np.asarray(v) for c, v in data.items()})
