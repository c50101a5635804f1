"""Netlists of parts, ports and nets."""

from collections import namedtuple
from itertools import product
from loguru import logger
import networkx as nx
import numpy as np
from dsem_sheaf._formats_and_types import (
    Diagnostic,
    DimensionMismatch,
    DsemSpec,
    TooLarge,
)
from dsem_sheaf._dsem import cross_edges, is_free, validate_spec

Port = namedtuple("Port", ["part", "name", "direction", "dim"])
Net = namedtuple("Net", ["name", "dim", "kind", "ports"])
Term = namedtuple("Term", ["coefficient", "data", "matrix", "scale"])
"""One summand `scale * c * (matrix @ data)` of a `LinearCombination`.

`coefficient` is a constant or a pair `(input, component)` pointing into
the inputs, `data` is an input index or None for a constant vector given
by the single column of `matrix`.
"""

MAX_LABELINGS = 10 ** 6


def shift_matrix(n: int, lag: int) -> np.ndarray:
    """Delay a length-n series by `lag` steps, filling with zeros."""
    return np.eye(n, k=-lag)


def crop_matrix(n: int, k: int) -> np.ndarray:
    """Keep the last n - k entries of a length-n series."""
    return np.eye(n)[k:]


def lcf_matrices(n: int, k: int) -> list:
    """Selections x -> (x_{j+k-i})_j for i = 1..k."""
    return [np.eye(n)[k - i:n - i] for i in range(1, k + 1)]


class IOFunction(object):
    """An input-output function of a part.

    Functions act on the concatenation of the part's inputs and produce
    the value of one output port.
    """

    kind = "general"

    def __init__(self, input_dims, output_dim):
        self.input_dims = tuple(int(d) for d in input_dims)
        self.output_dim = int(output_dim)
        self.offsets = np.concatenate([[0], np.cumsum(self.input_dims)])

    @property
    def arity(self):
        return len(self.input_dims)

    @property
    def affine(self):
        """The pair (matrix, offset) if the function is affine, else None."""
        return None

    def split(self, z):
        return [z[self.offsets[i]:self.offsets[i + 1]]
                for i in range(self.arity)]

    def __call__(self, z):
        raise NotImplementedError

    def jacobian(self, z):
        raise NotImplementedError

    def to_json(self):
        out = {"kind": self.kind, "input_dims": list(self.input_dims),
               "output_dim": self.output_dim}
        if self.affine is not None:
            out["matrix"] = self.affine[0].tolist()
            out["offset"] = self.affine[1].tolist()
        return out


class LinearCombination(IOFunction):
    """Sums of (coefficient x matrix x input) terms.

    Covers everything DSEM models need: shifted path contributions,
    AR filters, crops and the regression line. The function is affine when
    no coefficient is read from the inputs and bilinear otherwise.
    """

    def __init__(self, input_dims, output_dim, terms):
        super().__init__(input_dims, output_dim)
        self.terms = tuple(
            Term(t.coefficient, t.data, np.atleast_2d(t.matrix), float(t.scale))
            for t in terms
        )
        for t in self.terms:
            width = 1 if t.data is None else self.input_dims[t.data]
            if t.matrix.shape != (self.output_dim, width):
                raise DimensionMismatch(
                    "Term matrix has shape %s, expected %s."
                    % (t.matrix.shape, (self.output_dim, width))
                )
        self._affine = None
        if all(not isinstance(t.coefficient, tuple) for t in self.terms):
            self.kind = "affine"
            A = np.zeros((self.output_dim, self.offsets[-1]))
            b = np.zeros(self.output_dim)
            for t in self.terms:
                if t.data is None:
                    b += t.scale * t.coefficient * t.matrix[:, 0]
                else:
                    lo, hi = self.offsets[t.data], self.offsets[t.data + 1]
                    A[:, lo:hi] += t.scale * t.coefficient * t.matrix
            self._affine = (A, b)

    @property
    def affine(self):
        return self._affine

    def _coefficient(self, term, inputs):
        if isinstance(term.coefficient, tuple):
            i, c = term.coefficient
            return inputs[i][c]
        return term.coefficient

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self._affine is not None:
            return self._affine[0] @ z + self._affine[1]
        inputs = self.split(z)
        out = np.zeros(self.output_dim)
        for t in self.terms:
            data = np.ones(1) if t.data is None else inputs[t.data]
            out += t.scale * self._coefficient(t, inputs) * (t.matrix @ data)
        return out

    def jacobian(self, z):
        if self._affine is not None:
            return self._affine[0]
        z = np.asarray(z, dtype=float)
        inputs = self.split(z)
        J = np.zeros((self.output_dim, self.offsets[-1]))
        for t in self.terms:
            c = self._coefficient(t, inputs)
            if t.data is None:
                data = np.ones(1)
            else:
                data = inputs[t.data]
                lo, hi = self.offsets[t.data], self.offsets[t.data + 1]
                J[:, lo:hi] += t.scale * c * t.matrix
            if isinstance(t.coefficient, tuple):
                i, comp = t.coefficient
                J[:, self.offsets[i] + comp] += t.scale * (t.matrix @ data)
        return J


class CallableFunction(IOFunction):
    """Wrap an arbitrary differentiable function.

    Without an explicit `jac` the Jacobian uses central differences.
    """

    def __init__(self, func, input_dims, output_dim, jac=None, step=1e-6):
        super().__init__(input_dims, output_dim)
        self.func = func
        self.jac = jac
        self.step = step

    def __call__(self, z):
        return np.asarray(
            self.func(np.asarray(z, dtype=float)), dtype=float).reshape(-1)

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        if self.jac is not None:
            return np.atleast_2d(np.asarray(self.jac(z), dtype=float))
        J = np.zeros((self.output_dim, len(z)))
        for i in range(len(z)):
            dz = np.zeros(len(z))
            dz[i] = self.step
            J[:, i] = (self(z + dz) - self(z - dz)) / (2 * self.step)
        return J


class Part(object):
    """A part with ordered ports and one function per output port."""

    def __init__(self, name, ports, functions):
        self.name = name
        self.ports = tuple(
            Port(name, *p) if not isinstance(p, Port) else p for p in ports)
        self.functions = dict(functions)

    @property
    def inputs(self):
        return [p for p in self.ports if p.direction == "input"]

    @property
    def outputs(self):
        return [p for p in self.ports if p.direction == "output"]

    def port(self, name):
        for p in self.ports:
            if p.name == name:
                return p
        raise KeyError("Part `%s` has no port `%s`." % (self.name, name))

    def __repr__(self):
        return "<Part %s: %d inputs, %d outputs>" % (
            self.name, len(self.inputs), len(self.outputs))


class Netlist(object):
    """Parts connected by nets.

    `fixed` maps net names to known values (numeric coefficients) and
    `roles` describes what each net represents in a DSEM model, e.g.
    `{"role": "series", "variable": "A"}`.
    """

    def __init__(self, parts, nets, unchecked=False, fixed=None, roles=None):
        self.parts = {p.name: p for p in parts}
        self.nets = {n.name: Net(n.name, n.dim, n.kind, tuple(n.ports))
                     for n in nets}
        self.unchecked = unchecked
        self.fixed = {k: np.asarray(v, dtype=float)
                      for k, v in (fixed or {}).items()}
        self.roles = dict(roles or {})

    def net_of(self, part, port):
        """Name of the net a port is connected to, or None."""
        for net in self.nets.values():
            if (part, port) in net.ports:
                return net.name
        return None

    def producers(self, net):
        """Ports driving a net."""
        return [(pa, po) for pa, po in self.nets[net].ports
                if self.parts[pa].port(po).direction == "output"]

    def consumers(self, net):
        return [(pa, po) for pa, po in self.nets[net].ports
                if self.parts[pa].port(po).direction == "input"]

    def __repr__(self):
        return "<Netlist: %d parts, %d nets%s>" % (
            len(self.parts), len(self.nets),
            ", unchecked" if self.unchecked else "")


def netlist_from_dsem(spec: DsemSpec, n: int = 1, breakout: bool = False):
    """Translate a DSEM into a netlist.

    Every variable becomes a net carrying a length-n series and every
    variable with inbound edges gets one part computing the sum of its
    shifted parents. Free coefficients, and all of them when `breakout` is
    set, become scalar nets feeding extra input ports.
    """
    validate_spec(spec)
    roles = {v: {"role": "series", "variable": v} for v in spec.variables}
    ports = {v: [] for v in spec.variables}
    coefficient_ports = {}
    fixed = {}
    parts = []
    for v in spec.variables:
        edges = cross_edges(spec, v)
        if not edges:
            continue
        part_ports, terms = [], []
        for e in edges:
            data = len(part_ports)
            name = "%s@%d" % (e.source, e.lag)
            part_ports.append(Port(v, name, "input", n))
            ports[e.source].append((v, name))
            if breakout or is_free(e.coefficient):
                net = "gamma:%s->%s@%d" % (e.source, v, e.lag)
                coef = (len(part_ports), 0)
                part_ports.append(Port(v, "gamma:" + name, "input", 1))
                coefficient_ports[net] = (v, "gamma:" + name)
                roles[net] = {"role": "coefficient", "edge": e}
                if not is_free(e.coefficient):
                    fixed[net] = [e.coefficient]
            else:
                coef = float(e.coefficient)
            terms.append(Term(coef, data, shift_matrix(n, e.lag), spec.h))
        part_ports.append(Port(v, v, "output", n))
        ports[v].append((v, v))
        fn = LinearCombination([p.dim for p in part_ports[:-1]], n, terms)
        parts.append(Part(v, part_ports, {v: fn}))
    nets = [Net(v, n, "series", ports[v]) for v in spec.variables]
    nets += [Net(k, 1, "scalar", [p]) for k, p in coefficient_ports.items()]
    netlist = Netlist(parts, nets, fixed=fixed, roles=roles)
    logger.info("Built netlist with {} parts and {} nets.",
                len(netlist.parts), len(netlist.nets))
    return netlist


def validate(netlist: Netlist) -> list:
    """List all violations of the netlist rules; empty if valid."""
    report = []
    seen = {}
    for net in netlist.nets.values():
        outputs = 0
        for part, port in net.ports:
            if part not in netlist.parts:
                report.append(Diagnostic(
                    "UnknownPort", net.name,
                    "Net `%s` refers to unknown part `%s`." % (net.name, part)))
                continue
            try:
                p = netlist.parts[part].port(port)
            except KeyError:
                report.append(Diagnostic(
                    "UnknownPort", net.name,
                    "Net `%s` refers to unknown port `%s.%s`."
                    % (net.name, part, port)))
                continue
            seen.setdefault((part, port), []).append(net.name)
            outputs += p.direction == "output"
            if p.dim != net.dim:
                report.append(Diagnostic(
                    "DimensionMismatch", net.name,
                    "Port `%s.%s` has dimension %d but net `%s` has %d."
                    % (part, port, p.dim, net.name, net.dim)))
        if outputs > 1 and not netlist.unchecked:
            report.append(Diagnostic(
                "MultiOutputNet", net.name,
                "Net `%s` is driven by %d output ports." % (net.name, outputs)))
    for (part, port), nets in seen.items():
        if len(nets) > 1:
            report.append(Diagnostic(
                "PortInMultipleNets", "%s.%s" % (part, port),
                "Port `%s.%s` is connected to nets %s." % (part, port, nets)))
    for part in netlist.parts.values():
        for p in part.ports:
            if (part.name, p.name) not in seen:
                report.append(Diagnostic(
                    "DanglingPort", "%s.%s" % (part.name, p.name),
                    "Port `%s.%s` is not connected to any net."
                    % (part.name, p.name)))
        n_inputs = len(part.inputs)
        for p in part.outputs:
            fn = part.functions.get(p.name)
            if fn is None:
                report.append(Diagnostic(
                    "MissingFunction", "%s.%s" % (part.name, p.name),
                    "Output port `%s.%s` has no function."
                    % (part.name, p.name)))
                continue
            if fn.arity != n_inputs:
                report.append(Diagnostic(
                    "ArityMismatch", part.name,
                    "Function of `%s.%s` takes %d inputs but the part has %d "
                    "input ports." % (part.name, p.name, fn.arity, n_inputs)))
            elif list(fn.input_dims) != [q.dim for q in part.inputs]:
                report.append(Diagnostic(
                    "DimensionMismatch", part.name,
                    "Function of `%s.%s` expects input dimensions %s."
                    % (part.name, p.name, list(fn.input_dims))))
            if fn.output_dim != p.dim:
                report.append(Diagnostic(
                    "DimensionMismatch", part.name,
                    "Function of `%s.%s` returns dimension %d, port has %d."
                    % (part.name, p.name, fn.output_dim, p.dim)))
    return report


def wiring_hypergraph(netlist: Netlist) -> dict:
    """One hyperedge per net, containing its `(part, port, direction)`s."""
    return {
        net.name: frozenset(
            (part, port, netlist.parts[part].port(port).direction)
            for part, port in net.ports
        )
        for net in netlist.nets.values()
    }


def graph_from_hypergraph(hypergraph: dict) -> nx.MultiDiGraph:
    """Build the bipartite netlist graph of a wiring hypergraph."""
    graph = nx.MultiDiGraph()
    for net, ports in sorted(hypergraph.items()):
        graph.add_node(("net", net), kind="net")
        for part, port, direction in sorted(ports):
            graph.add_node(("part", part), kind="part")
            graph.add_edge(("part", part), ("net", net), key=port,
                           label=port, direction=direction)
    return graph


def hypergraph_from_graph(graph: nx.MultiDiGraph) -> dict:
    """Recover the wiring hypergraph from a netlist graph."""
    hypergraph = {}
    for node, data in graph.nodes(data=True):
        if data["kind"] == "net":
            hypergraph[node[1]] = frozenset(
                (u[1], d["label"], d["direction"])
                for u, _, d in graph.in_edges(node, data=True)
            )
    return hypergraph


def netlist_graph(netlist: Netlist) -> nx.MultiDiGraph:
    """The bipartite DAG with edges part -> net labeled by port."""
    graph = graph_from_hypergraph(wiring_hypergraph(netlist))
    for part in netlist.parts:
        graph.add_node(("part", part), kind="part")
    if not nx.is_directed_acyclic_graph(graph):
        raise AssertionError("netlist graphs are bipartite and thus acyclic")
    return graph


def external_io(netlist: Netlist) -> tuple:
    """Nets without an output port and nets without an input port."""
    inputs, outputs = set(), set()
    for net in netlist.nets.values():
        directions = [netlist.parts[pa].port(po).direction
                      for pa, po in net.ports]
        if "output" not in directions:
            inputs.add(net.name)
        if "input" not in directions:
            outputs.add(net.name)
    return inputs, outputs


def consistent_labelings(netlist: Netlist, grid) -> list:
    """Enumerate net labelings on `grid` satisfying every part function."""
    grid = list(grid)
    nets = list(netlist.nets.values())
    size = sum(net.dim for net in nets)
    if len(grid) ** size > MAX_LABELINGS:
        raise TooLarge("%d labelings exceed the cap of %d."
                       % (len(grid) ** size, MAX_LABELINGS))
    labelings = []
    for values in product(grid, repeat=size):
        labels, i = {}, 0
        for net in nets:
            labels[net.name] = np.array(values[i:i + net.dim], dtype=float)
            i += net.dim
        if all(_part_holds(netlist, part, labels)
               for part in netlist.parts.values()):
            labelings.append(labels)
    return labelings


def _part_holds(netlist, part, labels, tol=1e-9):
    z = np.concatenate(
        [labels[netlist.net_of(part.name, p.name)] for p in part.inputs]
        or [np.zeros(0)])
    for p in part.outputs:
        out = labels[netlist.net_of(part.name, p.name)]
        if np.abs(part.functions[p.name](z) - out).max(initial=0) > tol:
            return False
    return True


def netlist_to_json(netlist: Netlist) -> dict:
    """Serialize a netlist for debugging."""
    return {
        "unchecked": netlist.unchecked,
        "parts": [
            {
                "name": part.name,
                "ports": [p._asdict() for p in part.ports],
                "functions": {k: f.to_json()
                              for k, f in part.functions.items()},
            }
            for part in netlist.parts.values()
        ],
        "nets": [
            {"name": net.name, "dim": net.dim, "kind": net.kind,
             "ports": [list(p) for p in net.ports]}
            for net in netlist.nets.values()
        ],
        "fixed": {k: v.tolist() for k, v in netlist.fixed.items()},
    }
