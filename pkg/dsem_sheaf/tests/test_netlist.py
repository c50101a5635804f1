"""Test netlists and their combinatorial views."""

from itertools import product
import networkx as nx
import numpy as np
import pytest
import dsem_sheaf as ds
from dsem_sheaf._formats_and_types import DimensionMismatch, TooLarge
from dsem_sheaf._netlist import Term
from dsem_sheaf.tests import data_file

bering = ds.ingest_model(data_file("bering.json"))
sem = ds.dsem_spec(["A", "B"], [("A", "B", 0, 0.5)])


def kinds(report):
    return sorted(d.kind for d in report)


def random_spec(rng, size=3):
    names = ["V%d" % i for i in range(size)]
    edges = [(names[i], names[j], int(rng.integers(0, 2)),
              float(rng.integers(-2, 3)))
             for i in range(size) for j in range(i + 1, size)
             if rng.random() < 0.6]
    return ds.dsem_spec(names, edges, lags=[0, 1])


def test_sem_netlist():
    netlist = ds.netlist_from_dsem(sem)
    assert list(netlist.parts) == ["B"]
    assert sorted(netlist.nets) == ["A", "B"]
    assert ds.external_io(netlist) == ({"A"}, {"B"})
    assert ds.validate(netlist) == []


def test_bering_netlist():
    netlist = ds.netlist_from_dsem(bering, 5)
    assert len(netlist.parts) == 6
    assert len(netlist.nets) == 8
    cold = netlist.nets["ColdPool"]
    assert len(cold.ports) == 3
    assert len(netlist.producers("ColdPool")) == 1
    assert len(netlist.consumers("ColdPool")) == 2
    assert ds.validate(netlist) == []
    inputs, outputs = ds.external_io(netlist)
    assert inputs == {"SeaIce", "Spawners"}
    assert outputs == {"Survival"}


def test_breakout_adds_coefficient_nets():
    netlist = ds.netlist_from_dsem(bering, 5, breakout=True)
    assert len(netlist.nets) == 16
    net = "gamma:SeaIce->ColdPool@1"
    assert netlist.roles[net]["role"] == "coefficient"
    assert np.allclose(netlist.fixed[net], [0.6])
    assert ds.validate(netlist) == []


def test_no_edges():
    spec = ds.dsem_spec(["A", "B", "C"], [])
    netlist = ds.netlist_from_dsem(spec)
    assert len(netlist.parts) == 0
    assert len(netlist.nets) == 3
    assert ds.external_io(netlist)[0] == {"A", "B", "C"}


def test_part_function_shifts():
    spec = ds.dsem_spec(["A", "B"], [("A", "B", 1, 0.5)])
    netlist = ds.netlist_from_dsem(spec, 4)
    fn = netlist.parts["B"].functions["B"]
    assert fn.affine is not None
    assert np.allclose(fn([1, 2, 3, 4]), [0, 0.5, 1.0, 1.5])


def test_multi_output_net():
    netlist = ds.netlist_from_dsem(sem)
    extra = ds.Part("C", [("x", "input", 1), ("B", "output", 1)],
                    {"B": ds.LinearCombination([1], 1, [Term(1.0, 0, 1, 1)])})
    nets = [ds.Net("A", 1, "series", [("B", "A@0"), ("C", "x")]),
            ds.Net("B", 1, "series", [("B", "B"), ("C", "B")])]
    broken = ds.Netlist(list(netlist.parts.values()) + [extra], nets)
    report = ds.validate(broken)
    assert kinds(report) == ["MultiOutputNet"]
    assert report[0].subject == "B"
    flagged = ds.Netlist(list(netlist.parts.values()) + [extra], nets,
                         unchecked=True)
    assert ds.validate(flagged) == []


def test_arity_and_dangling():
    fn = ds.LinearCombination([1, 1], 1, [Term(1.0, 0, 1, 1)])
    part = ds.Part("P", [("a", "input", 1), ("b", "input", 1),
                         ("c", "input", 1), ("y", "output", 1)], {"y": fn})
    nets = [ds.Net("a", 1, "scalar", [("P", "a")]),
            ds.Net("b", 1, "scalar", [("P", "b")]),
            ds.Net("y", 1, "scalar", [("P", "y")])]
    report = ds.validate(ds.Netlist([part], nets))
    assert kinds(report) == ["ArityMismatch", "DanglingPort"]


def test_term_dimensions():
    with pytest.raises(DimensionMismatch):
        ds.LinearCombination([3], 2, [Term(1.0, 0, np.eye(3), 1.0)])


def test_bilinear_jacobian():
    fn = ds.LinearCombination([1, 3], 3, [Term((0, 0), 1, np.eye(3), 1.0)])
    assert fn.affine is None
    z = np.array([2.0, 1.0, -1.0, 3.0])
    assert np.allclose(fn(z), [2, -2, 6])
    numeric = ds.CallableFunction(fn, [1, 3], 3)
    assert np.allclose(fn.jacobian(z), numeric.jacobian(z), atol=1e-6)


def test_netlist_graph():
    graph = ds.netlist_graph(ds.netlist_from_dsem(sem))
    assert graph.number_of_nodes() == 3
    labels = sorted(d["label"] for _, _, d in graph.edges(data=True))
    assert labels == ["A@0", "B"]
    assert nx.is_directed_acyclic_graph(graph)
    big = ds.netlist_graph(ds.netlist_from_dsem(bering))
    assert big.number_of_nodes() == 14


def test_graph_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(100):
        netlist = ds.netlist_from_dsem(random_spec(rng, 4), 2, breakout=True)
        hyper = ds.wiring_hypergraph(netlist)
        graph = ds.graph_from_hypergraph(hyper)
        assert ds.hypergraph_from_graph(graph) == hyper
        again = ds.graph_from_hypergraph(ds.hypergraph_from_graph(graph))
        assert nx.is_isomorphic(graph, again)


def test_labelings_match_simulated_trajectories():
    rng = np.random.default_rng(4)
    grid = [-1.0, 0.0, 1.0]
    for _ in range(5):
        spec = random_spec(rng)
        model = ds.build_model_sheaf(spec, 2, ar=0, breakout=False)
        found = {tuple(np.concatenate([labels[v] for v in spec.variables]))
                 for labels in ds.consistent_labelings(model.netlist, grid)}
        expected = set()
        for init in product(grid, repeat=3):
            x = ds.simulate(spec, 2, init=list(init))
            if x.isin(grid).all().all():
                expected.add(tuple(x.to_numpy().T.reshape(-1)))
        assert (0.0,) * 6 in expected
        assert found == expected


def test_labelings_cap():
    netlist = ds.netlist_from_dsem(bering, 10)
    with pytest.raises(TooLarge):
        ds.consistent_labelings(netlist, [0, 1])


def test_netlist_to_json():
    out = ds.netlist_to_json(ds.netlist_from_dsem(bering, 3, breakout=True))
    assert len(out["parts"]) == 6
    assert out["fixed"]["gamma:Spawners->Survival@0"] == [-0.59]
    part = [p for p in out["parts"] if p["name"] == "ColdPool"][0]
    assert part["functions"]["ColdPool"]["kind"] == "general"
    assert "matrix" not in part["functions"]["ColdPool"]
