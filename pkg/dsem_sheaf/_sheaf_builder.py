"""Build sheaf diagrams from netlists and DSEMs."""

from itertools import product
from loguru import logger
import numpy as np
import pandas as pd
from dsem_sheaf._formats_and_types import (
    FREE,
    ArPartSpec,
    DsemSheafError,
    DsemSpec,
    FreeCoefficientPresent,
    InvalidNetlist,
    MissingData,
    ModelSheaf,
    NotSeriesStalk,
    OrderTooLarge,
    TieGroup,
    TooLarge,
    UnknownCell,
    UnknownVariable,
)
from dsem_sheaf._dsem import is_free, persistence, self_edges
from dsem_sheaf._netlist import (
    CallableFunction,
    LinearCombination,
    Net,
    Netlist,
    Part,
    Port,
    Term,
    crop_matrix,
    lcf_matrices,
    netlist_from_dsem,
    validate,
)
from dsem_sheaf._topology import (
    Assignment,
    Poset,
    RestrictionMap,
    SheafDiagram,
    Stalk,
    is_section,
)


def part_cell(name):
    return "part:%s" % name


def net_cell(name):
    return "net:%s" % name


def obs_cell(name, t):
    return "obs:%s:%d" % (name, t)


def sheaf_from_netlist(netlist: Netlist, weights: dict = None, p=2.0):
    """Build the netlist sheaf and its default tie groups.

    Parts sit below the nets they connect to. The stalk of a part is the
    product of its input ports, the map to an input net is the coordinate
    projection onto that port and the map to an output net is the part's
    input-output function.
    """
    problems = validate(netlist)
    if problems:
        raise InvalidNetlist("; ".join(d.message for d in problems))
    weights = weights or {}
    cells, relations, stalks, maps, info, kinds = [], [], {}, {}, {}, {}
    ties = []
    slots = {}
    for part in netlist.parts.values():
        pc = part_cell(part.name)
        offset = 0
        for port in part.inputs:
            slots[(part.name, port.name)] = (offset, offset + port.dim)
            offset += port.dim
        cells.append(pc)
        stalks[pc] = Stalk(offset)
        info[pc] = {"kind": "part", "name": part.name}
    for net in netlist.nets.values():
        nc = net_cell(net.name)
        role = netlist.roles.get(net.name, {})
        cells.append(nc)
        stalks[nc] = Stalk(net.dim, float(weights.get(net.name, 1.0)))
        info[nc] = dict(role, kind="net", name=net.name)
        group = [(nc, 0, net.dim)]
        for part, port in net.ports:
            pc = part_cell(part)
            if (pc, nc) in maps:
                raise InvalidNetlist(
                    "Part `%s` connects to net `%s` twice." % (part, net.name))
            relations.append((pc, nc))
            p_obj = netlist.parts[part]
            if p_obj.port(port).direction == "input":
                lo, hi = slots[(part, port)]
                maps[(pc, nc)] = RestrictionMap.projection(
                    stalks[pc].dim, lo, hi)
                kinds[(pc, nc)] = "copy"
                group.append((pc, lo, hi))
            else:
                maps[(pc, nc)] = RestrictionMap.from_function(
                    p_obj.functions[port])
                kinds[(pc, nc)] = (
                    "autoregression" if role.get("role") == "lagvar"
                    else "prediction")
        if len(group) > 1:
            ties.append(TieGroup(tuple(group)))
    sheaf = SheafDiagram(
        Poset(cells, relations),
        stalks,
        maps,
        p=p,
        info=info,
        provenance={"netlist": netlist, "pair_kinds": kinds, "ties": ties,
                    "weights": dict(weights)},
    )
    logger.info("Built sheaf with {} cells and {} tie groups.",
                len(sheaf.cells), len(ties))
    return sheaf, ties


def tie_groups(sheaf) -> list:
    """The default tie groups recorded when the sheaf was built."""
    return list(sheaf.provenance.get("ties", []))


def explode_observations(sheaf, cells, n, labels=None) -> SheafDiagram:
    """Add one scalar observation cell above each coordinate of `cells`."""
    relations = list(sheaf.poset.hasse.edges)
    stalks = dict(sheaf.stalks)
    maps = dict(sheaf.stored)
    info = dict(sheaf.info)
    kinds = dict(sheaf.provenance.get("pair_kinds", {}))
    observations = dict(sheaf.provenance.get("observations", {}))
    labels = list(range(n)) if labels is None else list(labels)
    if len(labels) != n:
        raise NotSeriesStalk("Need %d observation labels, got %d."
                             % (n, len(labels)))
    new = []
    for cell in cells:
        if cell not in sheaf.poset:
            raise UnknownCell("Unknown cell `%s`." % (cell,))
        if sheaf.dim(cell) != n:
            raise NotSeriesStalk("Cell `%s` has dimension %d, not %d."
                                 % (cell, sheaf.dim(cell), n))
        name = sheaf.info.get(cell, {}).get("name", cell)
        variable = sheaf.info.get(cell, {}).get("variable", name)
        obs = []
        for t in range(n):
            oc = obs_cell(name, t)
            stalks[oc] = Stalk(1, sheaf.weight(cell), (labels[t],))
            maps[(cell, oc)] = RestrictionMap.projection(n, t, t + 1)
            relations.append((cell, oc))
            info[oc] = {"kind": "observation", "variable": variable,
                        "time": labels[t], "index": t, "net": cell}
            kinds[(cell, oc)] = "observation"
            obs.append(oc)
        observations[cell] = obs
        new.extend(obs)
    provenance = dict(sheaf.provenance, pair_kinds=kinds,
                      observations=observations, labels=labels)
    return SheafDiagram(
        Poset(list(sheaf.cells) + new, relations, sheaf.poset.labels),
        stalks, maps, p=sheaf.p, info=info, provenance=provenance)


def add_ar(structure, spec: ArPartSpec):
    """Add an AR(k) filter for one variable.

    On a netlist this adds the LCF part (inputs: coefficients `a` and the
    series `x`; output: the prediction of x_k..x_{n-1}) and the crop part
    on a shared net `<variable>.lagvar`. If the variable is already
    produced by a part, that part becomes the crop part: it receives the
    series as an extra `<variable>@own` input and outputs the cropped
    series minus its previous contribution, so sections follow the full
    recurrence. The result is flagged `unchecked` because the lag net has
    two outputs. A `constant` filter carries its coefficients inside the
    LCF part and has no `<variable>.a` net.

    On a sheaf built by `sheaf_from_netlist` the underlying netlist is
    augmented and the sheaf (with its observation cells) rebuilt; the
    pair `(sheaf, ties)` is returned.
    """
    if isinstance(structure, SheafDiagram):
        netlist = structure.provenance.get("netlist")
        if netlist is None:
            raise TypeError("The sheaf was not built from a netlist.")
        sheaf, ties = sheaf_from_netlist(
            add_ar(netlist, spec), structure.provenance.get("weights"),
            structure.p)
        observed = structure.provenance.get("observations", {})
        if observed:
            sheaf = explode_observations(
                sheaf, list(observed), structure.dim(list(observed)[0]),
                structure.provenance.get("labels"))
        return sheaf, ties

    netlist = structure
    v, k = spec.variable, int(spec.order)
    if v not in netlist.nets:
        raise UnknownVariable("There is no net `%s`." % v)
    n = netlist.nets[v].dim
    if spec.n is not None and spec.n != n:
        raise NotSeriesStalk("Net `%s` carries length %d, not %d."
                             % (v, n, spec.n))
    if k < 1:
        raise DsemSheafError("AR order must be at least 1.")
    if k >= n:
        raise OrderTooLarge("AR order %d needs series longer than %d."
                            % (k, n))
    a_net, lag_net, lcf = v + ".a", v + ".lagvar", v + ".lcf"
    if lag_net in netlist.nets:
        raise DsemSheafError("`%s` already has an AR filter." % v)
    coefs = spec.coefficients
    if coefs is None:
        coefs = [FREE] * k
    if len(coefs) != k:
        raise DsemSheafError("Need %d AR coefficients for `%s`." % (k, v))

    parts = dict(netlist.parts)
    nets = {name: [net.dim, net.kind, list(net.ports)]
            for name, net in netlist.nets.items()}
    crop = crop_matrix(n, k)
    values = np.array([np.nan if is_free(c) else c for c in coefs], float)
    if spec.constant:
        if np.isnan(values).any():
            raise FreeCoefficientPresent(
                "A constant filter for `%s` needs numeric coefficients." % v)
        parts[lcf] = Part(
            lcf,
            [Port(lcf, "x", "input", n), Port(lcf, "y", "output", n - k)],
            {"y": LinearCombination([n], n - k, [
                Term(float(a), 0, m, 1.0)
                for a, m in zip(values, lcf_matrices(n, k))])},
        )
    else:
        parts[lcf] = Part(
            lcf,
            [Port(lcf, "a", "input", k), Port(lcf, "x", "input", n),
             Port(lcf, "y", "output", n - k)],
            {"y": LinearCombination([k, n], n - k, [
                Term((0, i), 1, m, 1.0)
                for i, m in enumerate(lcf_matrices(n, k))])},
        )
    producers = netlist.producers(v)
    if producers:
        name, out = producers[0]
        old = netlist.parts[name]
        fn = old.functions[out]
        if not isinstance(fn, LinearCombination):
            raise InvalidNetlist(
                "Part `%s` must be linear to take an AR filter." % name)
        inputs = list(old.inputs) + [Port(name, v + "@own", "input", n)]
        terms = [Term(1.0, len(old.inputs), crop, 1.0)] + [
            Term(t.coefficient, t.data, crop @ t.matrix, -t.scale)
            for t in fn.terms]
        outputs = [p for p in old.outputs if p.name != out]
        functions = {p.name: old.functions[p.name] for p in outputs}
        outputs.append(Port(name, lag_net, "output", n - k))
        functions[lag_net] = LinearCombination(
            [p.dim for p in inputs], n - k, terms)
        parts[name] = Part(name, inputs + outputs, functions)
        nets[v][2] = [p for p in nets[v][2] if p != (name, out)]
        nets[v][2].append((name, v + "@own"))
        lag_ports = [(name, lag_net)]
    else:
        crop_part = v + ".crop"
        parts[crop_part] = Part(
            crop_part,
            [Port(crop_part, "x", "input", n),
             Port(crop_part, "y", "output", n - k)],
            {"y": LinearCombination([n], n - k, [Term(1.0, 0, crop, 1.0)])},
        )
        nets[v][2].append((crop_part, "x"))
        lag_ports = [(crop_part, "y")]
    nets[v][2].append((lcf, "x"))
    nets[lag_net] = [n - k, "series", lag_ports + [(lcf, "y")]]

    fixed = dict(netlist.fixed)
    roles = dict(netlist.roles)
    if not spec.constant:
        nets[a_net] = [k, "coefficients", [(lcf, "a")]]
        if not np.isnan(values).all():
            fixed[a_net] = values
        roles[a_net] = {"role": "ar", "variable": v}
    roles[lag_net] = {"role": "lagvar", "variable": v}
    return Netlist(
        parts.values(),
        [Net(name, d, kind, ports) for name, (d, kind, ports) in nets.items()],
        unchecked=True,
        fixed=fixed,
        roles=roles,
    )


def regression_sheaf(n: int):
    """The linear regression sheaf for `n` points and its tie groups."""
    if n < 1:
        raise DsemSheafError("Need at least one point.")
    line = Part(
        "line",
        [Port("line", "m", "input", 1), Port("line", "b", "input", 1),
         Port("line", "x", "input", n), Port("line", "y", "output", n)],
        {"y": LinearCombination([1, 1, n], n, [
            Term((0, 0), 2, np.eye(n), 1.0),
            Term((1, 0), None, np.ones((n, 1)), 1.0),
        ])},
    )
    nets = [
        Net("m", 1, "scalar", [("line", "m")]),
        Net("b", 1, "scalar", [("line", "b")]),
        Net("x", n, "series", [("line", "x")]),
        Net("y", n, "series", [("line", "y")]),
    ]
    return sheaf_from_netlist(Netlist([line], nets))


def feedback_sheaf(value_space="real", f=None, g=None):
    """Two variables feeding each other through `f` (x -> y) and `g`."""
    if value_space not in ("real", "integer-grid"):
        raise DsemSheafError("Unknown value space `%s`." % value_space)
    f = f or (lambda x: x)
    g = g or (lambda y: y)
    parts = [
        Part("f", [Port("f", "x", "input", 1), Port("f", "y", "output", 1)],
             {"y": CallableFunction(lambda z: [f(z[0])], [1], 1)}),
        Part("g", [Port("g", "y", "input", 1), Port("g", "x", "output", 1)],
             {"x": CallableFunction(lambda z: [g(z[0])], [1], 1)}),
    ]
    nets = [
        Net("X", 1, "scalar", [("f", "x"), ("g", "x")]),
        Net("Y", 1, "scalar", [("f", "y"), ("g", "y")]),
    ]
    sheaf, _ = sheaf_from_netlist(Netlist(parts, nets))
    sheaf.provenance["value_space"] = value_space
    return sheaf


def part_values(netlist, net_values) -> dict:
    """Stalk values on parts, copied from the nets on their input ports."""
    values = {}
    for part in netlist.parts.values():
        values[part_cell(part.name)] = np.concatenate(
            [np.asarray(net_values[netlist.net_of(part.name, p.name)], float)
             for p in part.inputs] or [np.zeros(0)])
    return values


def enumerate_sections(sheaf, grid, tol=1e-9, cap=10 ** 6) -> list:
    """All sections whose nets take values in a finite grid."""
    netlist = sheaf.provenance["netlist"]
    grid = list(grid)
    names = list(netlist.nets)
    size = sum(netlist.nets[n].dim for n in names)
    if len(grid) ** size > cap:
        raise TooLarge("%d candidate labelings exceed the cap of %d."
                       % (len(grid) ** size, cap))
    sections = []
    for values in product(grid, repeat=size):
        labels, i = {}, 0
        for name in names:
            d = netlist.nets[name].dim
            labels[name] = np.array(values[i:i + d], float)
            i += d
        cells = {net_cell(k): v for k, v in labels.items()}
        cells.update(part_values(netlist, labels))
        if is_section(sheaf, Assignment(sheaf, cells), tol):
            sections.append(labels)
    return sections


def _ar_coefficients(spec, variable, order):
    own = self_edges(spec, variable)
    if any(is_free(e.coefficient) for e in own):
        coefs = [FREE] * order
        for e in own:
            if not is_free(e.coefficient):
                coefs[e.lag - 1] = spec.h * e.coefficient
        return coefs
    return list(persistence(spec, variable, order))


def build_model_sheaf(
    spec: DsemSpec,
    n: int,
    ar: int = None,
    breakout: bool = True,
    labels=None,
    weights: dict = None,
    p: float = None,
) -> ModelSheaf:
    """Build the observation-level sheaf of a DSEM with AR filters.

    Parameters
    ----------
    spec : DsemSpec
        The model.
    n : int
        The length of the observed series.
    ar : int, optional
        AR order applied to every variable. Defaults to the per-variable
        orders of the model. With 0 no AR coefficients are estimated and
        each variable keeps its own-lag dynamics as a constant filter:
        the random walk, or its numeric self-edges. Free self-edges still
        get an estimated filter of their largest lag.
    breakout : bool
        Whether numeric path coefficients become coefficient nets so they
        can be estimated.
    labels : list, optional
        Time labels of the observations.

    Returns
    -------
    ModelSheaf
        The sheaf with its tie groups and cell bookkeeping.
    """
    netlist = netlist_from_dsem(spec, n, breakout=breakout)
    orders = {v: spec.ar_orders.get(v, 1) if ar is None else int(ar)
              for v in spec.variables}
    for v in spec.variables:
        own = self_edges(spec, v)
        if orders[v] == 0 and any(is_free(e.coefficient) for e in own):
            orders[v] = max(e.lag for e in own)
        if orders[v] > 0:
            netlist = add_ar(netlist, ArPartSpec(
                v, orders[v], _ar_coefficients(spec, v, orders[v]), n))
        else:
            coefs = persistence(spec, v)
            netlist = add_ar(netlist, ArPartSpec(
                v, len(coefs), list(coefs), n, constant=True))
    weights = weights if weights is not None else spec.options.get(
        "weights", {})
    p = p if p is not None else spec.options.get("p_norm", 2.0)
    sheaf, ties = sheaf_from_netlist(netlist, weights, p)
    series = {v: net_cell(v) for v in spec.variables}
    sheaf = explode_observations(sheaf, list(series.values()), n, labels)
    observations = {v: sheaf.provenance["observations"][series[v]]
                    for v in spec.variables}
    coefficients, ar_cells = {}, {}
    for name, role in netlist.roles.items():
        if role["role"] == "coefficient":
            coefficients[role["edge"]] = net_cell(name)
        elif role["role"] == "ar":
            ar_cells[role["variable"]] = net_cell(name)
    logger.info(
        "Model sheaf for {} variables over {} steps: {} cells, AR orders {}.",
        len(spec.variables), n, len(sheaf.cells), orders)
    return ModelSheaf(
        sheaf=sheaf,
        ties=ties,
        netlist=netlist,
        series=series,
        observations=observations,
        coefficients=coefficients,
        ar_coefficients=ar_cells,
        fixed={net_cell(k): v for k, v in netlist.fixed.items()},
        n=n,
        ar_orders=orders,
        spec=spec,
    )


def induced_assignment(model: ModelSheaf, spec: DsemSpec,
                       table: pd.DataFrame) -> Assignment:
    """Populate every cell from complete data and numeric coefficients."""
    if len(table) != model.n:
        raise MissingData("The table has %d rows, the model expects %d."
                          % (len(table), model.n))
    netlist = model.netlist
    nets = {}
    for name, role in netlist.roles.items():
        kind = role["role"]
        if kind == "series":
            series = table[role["variable"]].to_numpy(dtype=float)
            if np.isnan(series).any():
                raise MissingData("`%s` has missing values." % name)
            nets[name] = series
        elif kind == "coefficient":
            e = role["edge"]
            if is_free(e.coefficient):
                raise DsemSheafError(
                    "Edge `%s -> %s` has no numeric coefficient."
                    % (e.source, e.target))
            nets[name] = np.array([e.coefficient], float)
        elif kind == "ar":
            v = role["variable"]
            nets[name] = persistence(spec, v, model.ar_orders[v])
    for name, role in netlist.roles.items():
        if role["role"] == "lagvar":
            lcf = netlist.parts[role["variable"] + ".lcf"]
            z = np.concatenate([nets[netlist.net_of(lcf.name, p.name)]
                                for p in lcf.inputs])
            nets[name] = lcf.functions["y"](z)
    values = {net_cell(k): v for k, v in nets.items()}
    values.update(part_values(netlist, nets))
    for v, cells in model.observations.items():
        for t, oc in enumerate(cells):
            values[oc] = nets[v][t:t + 1]
    return Assignment(model.sheaf, values)
