"""Test posets, sheaf diagrams and the consistency radius."""

import numpy as np
import pytest
import dsem_sheaf as ds
from dsem_sheaf._formats_and_types import (
    DimensionMismatch,
    InvalidNetlist,
    NotGlobal,
    UnknownCell,
)
from dsem_sheaf._topology import compose
from dsem_sheaf.tests import data_file

bering = ds.ingest_model(data_file("bering.json"))
regression, regression_ties = ds.regression_sheaf(3)
ols = {
    "part:line": [0, 1 / 3, 0, 1, 2],
    "net:m": [0],
    "net:b": [1 / 3],
    "net:x": [0, 1, 2],
    "net:y": [0, 1, 0],
}


def random_tree_sheaf(rng, cells=5):
    names = ["c0"]
    dims = {"c0": int(rng.integers(1, 4))}
    relations, maps = [], {}
    for i in range(1, cells):
        name = "c%d" % i
        parent = names[int(rng.integers(0, len(names)))]
        dims[name] = int(rng.integers(1, 4))
        relations.append((parent, name))
        maps[(parent, name)] = ds.RestrictionMap(
            dims[parent], dims[name], "affine",
            rng.normal(size=(dims[name], dims[parent])),
            rng.normal(size=dims[name]))
        names.append(name)
    return ds.SheafDiagram(ds.Poset(names, relations), dims, maps)


def test_up_set_chain():
    poset = ds.Poset(["a", "b", "c"], [("a", "b"), ("b", "c")])
    assert poset.up_set("a") == {"a", "b", "c"}
    assert poset.up_set("c") == {"c"}
    assert poset.down_set("c") == {"a", "b", "c"}
    assert poset.leq("a", "c")
    assert not poset.leq("c", "a")
    assert sorted(poset.hasse.edges) == [("a", "b"), ("b", "c")]
    assert poset.chains() == [("a", "b", "c")]
    with pytest.raises(UnknownCell):
        poset.up_set("d")


def test_cycles_are_condensed():
    poset = ds.Poset(["a", "b", "c"], [("a", "b"), ("b", "a"), ("b", "c")])
    assert poset.cells == ("a+b", "c")
    assert poset.cell_of("a") == "a+b"
    assert poset.members["a+b"] == {"a", "b"}
    assert poset.up_set("a+b") == {"a+b", "c"}


def test_sheaf_rejects_cycles():
    poset = ds.Poset(["a", "b", "c"], [("a", "b"), ("b", "a"), ("b", "c")])
    with pytest.raises(InvalidNetlist, match="`a`, `b` form a cycle"):
        ds.SheafDiagram(poset, {"a": 1, "b": 1, "c": 1}, {})


def test_unknown_relation():
    with pytest.raises(UnknownCell):
        ds.Poset(["a"], [("a", "b")])


def test_up_set_of_part():
    sheaf, _ = ds.sheaf_from_netlist(ds.netlist_from_dsem(bering))
    up = sheaf.poset.up_set("part:Survival")
    assert up == {"part:Survival", "net:Survival", "net:DietCopepods",
                  "net:DietKrill", "net:Spawners"}


def test_regression_radius():
    a = ds.Assignment(regression, ols)
    assert ds.consistency_radius(regression, a) == pytest.approx(
        np.sqrt(2 / 3), abs=1e-12)
    assert not ds.is_section(regression, a)


def test_regression_breakdown():
    a = ds.Assignment(regression, ols)
    terms = ds.residual_breakdown(regression, a)
    assert terms[0].upper == "net:y"
    assert np.allclose(terms[0].coordinates, [1 / 9, 4 / 9, 1 / 9])
    assert all(t.contribution == 0 for t in terms[1:])
    total = sum(t.contribution for t in terms) ** 0.5
    assert abs(total - ds.consistency_radius(regression, a)) <= 1e-12


def test_exact_fit_is_section():
    values = {"part:line": [2, 0, 0, 1, 2], "net:m": [2], "net:b": [0],
              "net:x": [0, 1, 2], "net:y": [0, 2, 4]}
    a = ds.Assignment(regression, values)
    assert ds.consistency_radius(regression, a) == 0
    assert ds.is_section(regression, a)


def test_feedback_half():
    sheaf = ds.feedback_sheaf("real", f=lambda x: 1 - x)
    a = ds.Assignment(sheaf, {c: [0.5] for c in sheaf.cells})
    assert ds.consistency_radius(sheaf, a) <= 1e-12
    b = ds.Assignment(sheaf, {c: [1.0] for c in sheaf.cells})
    assert ds.consistency_radius(sheaf, b) == pytest.approx(1.0)


def test_section_from_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(200):
        sheaf = random_tree_sheaf(rng)
        a = ds.section_from(sheaf, "c0", rng.normal(size=sheaf.dim("c0")))
        assert a.is_global
        assert ds.consistency_radius(sheaf, a) <= 1e-9


def test_radius_is_lipschitz():
    rng = np.random.default_rng(5)
    for _ in range(50):
        sheaf = random_tree_sheaf(rng, 6)
        bound = np.sqrt(sum(
            (np.linalg.norm(sheaf.restriction(lo, up).matrix, 2) + 1) ** 2
            for lo, up in sheaf.pairs()))
        a = ds.Assignment(sheaf, {c: rng.normal(size=sheaf.dim(c))
                                  for c in sheaf.cells})
        delta = {c: rng.normal(size=sheaf.dim(c)) for c in sheaf.cells}
        size = np.sqrt(sum((d ** 2).sum() for d in delta.values()))
        scale = rng.uniform(0, 1e-3) / size
        moved = a.updated({c: a[c] + scale * d for c, d in delta.items()})
        change = abs(ds.consistency_radius(sheaf, moved)
                     - ds.consistency_radius(sheaf, a))
        assert change <= bound * scale * size + 1e-12


def test_weight_scaling():
    rng = np.random.default_rng(1)
    sheaf = random_tree_sheaf(rng, 6)
    a = ds.Assignment(sheaf, {c: rng.normal(size=sheaf.dim(c))
                              for c in sheaf.cells})
    base = ds.consistency_radius(sheaf, a)
    scaled = ds.consistency_radius(sheaf, a,
                                   weights={c: 3.0 for c in sheaf.cells})
    assert scaled == pytest.approx(3 * base)


def test_breakdown_recombines():
    rng = np.random.default_rng(2)
    sheaf = random_tree_sheaf(rng, 6)
    a = ds.Assignment(sheaf, {c: rng.normal(size=sheaf.dim(c))
                              for c in sheaf.cells})
    terms = ds.residual_breakdown(sheaf, a)
    assert all(t.contribution >= 0 for t in terms)
    contributions = [t.contribution for t in terms]
    assert contributions == sorted(contributions, reverse=True)
    assert abs(sum(contributions) ** 0.5
               - ds.consistency_radius(sheaf, a)) <= 1e-12


def test_hasse_only():
    rng = np.random.default_rng(3)
    sheaf = random_tree_sheaf(rng, 6)
    a = ds.Assignment(sheaf, {c: rng.normal(size=sheaf.dim(c))
                              for c in sheaf.cells})
    assert ds.consistency_radius(sheaf, a, hasse_only=True) <= \
        ds.consistency_radius(sheaf, a)


def test_local_radius():
    a = ds.Assignment(regression, ols)
    assert ds.local_consistency_radius(regression, a, ["net:y"]) == 0
    assert ds.local_consistency_radius(regression, a, ["part:line"]) == \
        pytest.approx(ds.consistency_radius(regression, a))


def test_not_global():
    a = ds.Assignment(regression, {"net:m": [0]})
    assert not a.is_global
    with pytest.raises(NotGlobal):
        ds.consistency_radius(regression, a)


def test_assignment_checks():
    with pytest.raises(DimensionMismatch):
        ds.Assignment(regression, {"net:x": [1, 2]})
    with pytest.raises(UnknownCell):
        ds.Assignment(regression, {"net:z": [1]})
    a = ds.Assignment(regression, {"net:m": [0]})
    b = a.updated({"net:b": [1]})
    assert b.support == {"net:m", "net:b"}
    assert a.support == {"net:m"}


def test_functoriality_clean():
    sheaf = ds.explode_observations(regression, ["net:x", "net:y"], 3)
    assert len(sheaf.poset.chains()) > 0
    assert ds.check_functoriality(sheaf) == []


def test_functoriality_violation():
    poset = ds.Poset(["a", "b", "c"], [("a", "b"), ("b", "c")])
    maps = {
        ("a", "b"): ds.RestrictionMap(2, 2, "affine", np.eye(2)),
        ("b", "c"): ds.RestrictionMap.projection(2, 0, 1),
        ("a", "c"): ds.RestrictionMap(2, 1, "affine", [[2.0, 0.0]]),
    }
    sheaf = ds.SheafDiagram(poset, {"a": 2, "b": 2, "c": 1}, maps)
    violations = ds.check_functoriality(sheaf)
    assert len(violations) == 1
    assert violations[0][:3] == ("a", "b", "c")
    assert violations[0].max_error > 0


def test_restriction_maps():
    p = ds.RestrictionMap.projection(4, 1, 3)
    assert np.allclose(p([1, 2, 3, 4]), [2, 3])
    q = ds.RestrictionMap.projection(2, 1, 2)
    pq = compose(q, p)
    assert pq.kind == "projection"
    assert np.allclose(pq([1, 2, 3, 4]), [3])
    square = ds.RestrictionMap(2, 1, "general", func=lambda v: [v[0] * v[1]])
    assert np.allclose(square.jacobian([2.0, 3.0]), [[3.0, 2.0]], atol=1e-6)
    assert not compose(square, ds.RestrictionMap.identity(2)).is_affine


def test_json_round_trip():
    a = ds.Assignment(regression, ols)
    again = ds.assignment_from_json(regression, ds.assignment_to_json(a))
    assert ds.consistency_radius(regression, again) == \
        ds.consistency_radius(regression, a)
    out = ds.sheaf_to_json(regression)
    assert len(out["cells"]) == 5
    assert len(out["hasse"]) == 4
    kinds = sorted(m["kind"] for m in out["maps"])
    assert kinds == ["general", "projection", "projection", "projection"]
