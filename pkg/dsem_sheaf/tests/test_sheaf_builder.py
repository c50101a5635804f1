"""Test the construction of netlist, observation and AR sheaves."""

import numpy as np
import pytest
import dsem_sheaf as ds
from dsem_sheaf._formats_and_types import (
    DsemSheafError,
    InvalidNetlist,
    MissingData,
    NotSeriesStalk,
    OrderTooLarge,
    TooLarge,
    UnknownCell,
    UnknownVariable,
)
from dsem_sheaf._sheaf_builder import part_values
from dsem_sheaf.tests import data_file

bering = ds.ingest_model(data_file("bering.json"))
sem = ds.dsem_spec(["A", "B"], [("A", "B", 0, 0.5)])


def ar_sheaf(x, coefficients):
    """AR sheaf of one series with every net assigned, lag net cropped."""
    x = np.asarray(x, dtype=float)
    k = len(coefficients)
    netlist = ds.netlist_from_dsem(ds.dsem_spec(["x"], []), len(x))
    netlist = ds.add_ar(netlist, ds.ArPartSpec("x", k, coefficients, len(x)))
    sheaf, ties = ds.sheaf_from_netlist(netlist)
    nets = {"x": x, "x.a": np.asarray(coefficients, float), "x.lagvar": x[k:]}
    values = {"net:" + name: v for name, v in nets.items()}
    values.update(part_values(netlist, nets))
    return sheaf, ds.Assignment(sheaf, values)


def random_spec(rng, own_lag=2):
    names = ["V0", "V1", "V2"]
    edges = [(names[i], names[j], int(rng.integers(0, 2)),
              float(rng.uniform(-1, 1)))
             for i in range(3) for j in range(i + 1, 3) if rng.random() < 0.7]
    for v in names:
        if rng.random() < 0.4:
            edges.append((v, v, int(rng.integers(1, own_lag + 1)),
                          float(rng.uniform(-0.9, 0.9))))
    return ds.dsem_spec(names, edges, lags=[0, 1, 2])


def test_regression_sheaf():
    sheaf, ties = ds.regression_sheaf(4)
    assert len(sheaf.cells) == 5
    assert sheaf.dim("part:line") == 6
    assert len(ties) == 3
    f = sheaf.restriction("part:line", "net:y")
    assert np.allclose(f([2, 1, 0, 1, 2, 3]), [1, 3, 5, 7])
    m = sheaf.restriction("part:line", "net:m")
    assert m.kind == "projection"


def test_single_point_regression():
    sheaf, _ = ds.regression_sheaf(1)
    for m, b in [(1, 1), (0, 3), (-2, 7)]:
        a = ds.Assignment(sheaf, {"part:line": [m, b, 2], "net:m": [m],
                                  "net:b": [b], "net:x": [2], "net:y": [3]})
        assert ds.is_section(sheaf, a)


def test_sem_sheaf():
    sheaf, ties = ds.sheaf_from_netlist(ds.netlist_from_dsem(sem, 3))
    assert len(sheaf.cells) == 3
    f = sheaf.restriction("part:B", "net:B")
    assert np.allclose(f([1, 2, 3]), [0.5, 1, 1.5])
    assert sheaf.provenance["pair_kinds"][("part:B", "net:A")] == "copy"
    assert sheaf.provenance["pair_kinds"][("part:B", "net:B")] == "prediction"


def test_bering_sheaf():
    sheaf, ties = ds.sheaf_from_netlist(ds.netlist_from_dsem(bering, 4))
    kinds = [sheaf.info[c]["kind"] for c in sheaf.cells]
    assert kinds.count("part") == 6
    assert kinds.count("net") == 8
    assert ds.check_functoriality(sheaf) == []


def test_invalid_netlist():
    fn = ds.LinearCombination([1], 1, [])
    parts = [ds.Part(name, [("x", "input", 1), ("y", "output", 1)],
                     {"y": fn}) for name in ("P", "Q")]
    nets = [ds.Net("X", 1, "scalar", [("P", "x"), ("Q", "x")]),
            ds.Net("Y", 1, "scalar", [("P", "y"), ("Q", "y")])]
    with pytest.raises(InvalidNetlist):
        ds.sheaf_from_netlist(ds.Netlist(parts, nets))


def test_explode_regression():
    sheaf, _ = ds.regression_sheaf(3)
    exploded = ds.explode_observations(sheaf, ["net:x", "net:y"], 3)
    assert len(exploded.cells) == 11
    assert exploded.info["obs:y:2"]["time"] == 2
    assert exploded.provenance["observations"]["net:x"] == [
        "obs:x:0", "obs:x:1", "obs:x:2"]
    one, _ = ds.regression_sheaf(1)
    assert len(ds.explode_observations(one, ["net:y"], 1).cells) == 6
    labelled = ds.explode_observations(sheaf, ["net:x"], 3,
                                       labels=[1990, 1991, 1992])
    assert labelled.info["obs:x:1"]["time"] == 1991


def test_explode_errors():
    sheaf, _ = ds.regression_sheaf(3)
    with pytest.raises(NotSeriesStalk):
        ds.explode_observations(sheaf, ["net:m"], 3)
    with pytest.raises(UnknownCell):
        ds.explode_observations(sheaf, ["net:z"], 3)


def test_explode_keeps_sections():
    sheaf, _ = ds.regression_sheaf(3)
    exploded = ds.explode_observations(sheaf, ["net:x", "net:y"], 3)
    a = ds.section_from(exploded, "part:line", [2, 1, 0, 1, 2])
    assert ds.consistency_radius(exploded, a) == 0
    assert np.allclose(a["obs:y:2"], [5])


def test_tie_groups_cover_copies():
    model = ds.build_model_sheaf(bering, 6, ar=1)
    slots = {}
    for group in model.ties:
        for cell, start, stop in group.slots[1:]:
            slots.setdefault(cell, []).extend(range(start, stop))
    parts = [c for c in model.sheaf.cells
             if model.sheaf.info[c]["kind"] == "part"]
    assert sorted(slots) == sorted(parts)
    for cell in parts:
        assert sorted(slots[cell]) == list(range(model.sheaf.dim(cell)))
    assert ds.tie_groups(model.sheaf) == model.ties


def test_ar_constant():
    sheaf, a = ar_sheaf([3, 3, 3, 3], [1.0])
    assert ds.is_section(sheaf, a)
    assert sheaf.provenance["netlist"].unchecked


def test_ar_geometric():
    sheaf, a = ar_sheaf([1, 2, 4, 8], [2.0])
    assert ds.consistency_radius(sheaf, a) == 0


def test_ar_single_residual():
    sheaf, a = ar_sheaf([1, 2, 4, 9], [2.0])
    assert ds.consistency_radius(sheaf, a) == pytest.approx(1.0)
    terms = [t for t in ds.residual_breakdown(sheaf, a) if t.contribution > 0]
    assert len(terms) == 1
    assert terms[0].upper == "net:x.lagvar"
    assert np.allclose(terms[0].coordinates, [0, 0, 1])
    # with the lag net free the disagreement is split between both parts
    free = ds.minimize(ds.SolveRequest(
        sheaf, a, frozen=[c for c in sheaf.cells if c != "net:x.lagvar"]))
    assert free.radius == pytest.approx(np.sqrt(0.5))


def test_ar_recurrences():
    rng = np.random.default_rng(5)
    for k in (1, 2, 3):
        for _ in range(5):
            a = rng.uniform(-0.3, 0.3, size=k)
            x = list(rng.normal(size=k))
            for t in range(k, 30):
                x.append(sum(a[i] * x[t - 1 - i] for i in range(k)))
            sheaf, assignment = ar_sheaf(x, list(a))
            assert ds.consistency_radius(sheaf, assignment) <= 1e-10
            noise = rng.normal(size=30)
            sheaf, assignment = ar_sheaf(noise, list(a))
            assert ds.consistency_radius(sheaf, assignment) > 1e-3


def test_ar_errors():
    netlist = ds.netlist_from_dsem(sem, 4)
    with pytest.raises(OrderTooLarge):
        ds.add_ar(netlist, ds.ArPartSpec("A", 4))
    with pytest.raises(UnknownVariable):
        ds.add_ar(netlist, ds.ArPartSpec("C", 1))
    with pytest.raises(NotSeriesStalk):
        ds.add_ar(netlist, ds.ArPartSpec("A", 1, None, 5))
    with pytest.raises(DsemSheafError):
        ds.add_ar(netlist, ds.ArPartSpec("A", 0))
    once = ds.add_ar(netlist, ds.ArPartSpec("A", 1))
    with pytest.raises(DsemSheafError):
        ds.add_ar(once, ds.ArPartSpec("A", 1))


def test_ar_on_produced_variable():
    netlist = ds.add_ar(ds.netlist_from_dsem(bering, 6),
                        ds.ArPartSpec("ColdPool", 2))
    assert netlist.unchecked
    assert ds.validate(netlist) == []
    part = netlist.parts["ColdPool"]
    assert [p.name for p in part.outputs] == ["ColdPool.lagvar"]
    assert netlist.net_of("ColdPool", "ColdPool@own") == "ColdPool"
    assert len(netlist.producers("ColdPool.lagvar")) == 2
    assert netlist.producers("ColdPool") == []
    assert netlist.roles["ColdPool.a"] == {"role": "ar",
                                           "variable": "ColdPool"}


def test_ar_on_sheaf():
    sheaf, _ = ds.sheaf_from_netlist(ds.netlist_from_dsem(sem, 5))
    sheaf = ds.explode_observations(sheaf, ["net:A", "net:B"], 5)
    augmented, ties = ds.add_ar(sheaf, ds.ArPartSpec("B", 1))
    assert "obs:B:4" in augmented.cells
    assert "part:B.lcf" in augmented.cells
    assert "net:B.lagvar" in augmented.cells
    assert ds.check_functoriality(augmented) == []


def test_model_sheaf_structure():
    model = ds.build_model_sheaf(bering, 10, ar=1)
    assert len(model.sheaf.cells) == 128
    assert len(model.coefficients) == 8
    assert len(model.ar_coefficients) == 8
    assert len(model.observations["Krill"]) == 10
    assert np.allclose(model.fixed["net:Krill.a"], [1])
    plain = ds.build_model_sheaf(bering, 10, ar=0)
    assert len(plain.sheaf.cells) == 120
    assert plain.ar_coefficients == {}
    assert "part:Krill.lcf" in plain.sheaf.cells
    assert "net:Krill.a" not in plain.sheaf.cells
    assert plain.netlist.parts["Krill.lcf"].functions["y"].kind == "affine"


def test_persistence_filter_with_free_self_edge():
    spec = ds.dsem_spec(
        ["A", "B"], [("A", "B", 0, 0.5), ("B", "B", 2, "free")],
        lags=[0, 1, 2])
    model = ds.build_model_sheaf(spec, 8, ar=0)
    assert model.ar_orders == {"A": 0, "B": 2}
    assert model.ar_coefficients == {"B": "net:B.a"}
    assert "net:A.a" not in model.sheaf.cells
    assert "net:A.lagvar" in model.sheaf.cells


def test_induced_assignment_is_section():
    init = {v: 1.0 + 0.1 * i for i, v in enumerate(bering.variables)}
    table = ds.simulate(bering, 12, init=init)
    for ar in (None, 0, 1, 2):
        model = ds.build_model_sheaf(bering, 12, ar=ar)
        a = ds.induced_assignment(model, bering, table)
        assert a.is_global
        assert ds.consistency_radius(model.sheaf, a) <= 1e-10


@pytest.mark.parametrize("ar", [None, 0, 1, 2])
def test_sections_are_dsem_solutions(ar):
    rng = np.random.default_rng(6)
    for _ in range(200):
        spec = random_spec(rng, own_lag=ar or 2)
        table = ds.simulate(spec, 8, init=rng.normal(size=3))
        model = ds.build_model_sheaf(spec, 8, ar=ar)
        a = ds.induced_assignment(model, spec, table)
        assert ds.consistency_radius(model.sheaf, a) <= 1e-10
        cell = model.observations["V%d" % rng.integers(0, 3)][
            int(rng.integers(0, 8))]
        moved = a.updated({cell: a[cell] + 0.1})
        assert ds.consistency_radius(model.sheaf, moved) > 0


def test_induced_assignment_needs_complete_data():
    table = ds.simulate(bering, 12)
    table.iloc[2, 3] = np.nan
    model = ds.build_model_sheaf(bering, 12, ar=1)
    with pytest.raises(MissingData):
        ds.induced_assignment(model, bering, table)


def test_feedback_sections():
    same = ds.feedback_sheaf("integer-grid")
    grid = range(-5, 6)
    sections = ds.enumerate_sections(same, grid)
    assert len(sections) == 11
    assert all(s["X"][0] == s["Y"][0] for s in sections)
    flip = ds.feedback_sheaf("integer-grid", f=lambda x: 1 - x)
    assert ds.enumerate_sections(flip, grid) == []
    half = ds.enumerate_sections(flip, [0, 0.5, 1])
    assert len(half) == 1 and half[0]["X"][0] == 0.5
    with pytest.raises(TooLarge):
        ds.enumerate_sections(same, range(2000))
    with pytest.raises(DsemSheafError):
        ds.feedback_sheaf("complex")
