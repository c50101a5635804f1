"""Test DOT export and the HTML residual report."""

import os.path as path
from tempfile import TemporaryDirectory
import pandas as pd
import dsem_sheaf as ds
from dsem_sheaf.tests import check_viz

fork = ds.dsem_spec(["A", "B", "C"], [("A", "B", 0, 1.0), ("A", "C", 1, 2.0)])
report = pd.DataFrame({
    "lower": ["net:X", "net:X"],
    "upper": ["obs:X:0", "obs:X:1"],
    "kind": ["observation", "observation"],
    "variable": ["X", "X"],
    "time": [0, 1],
    "contribution": [0.9, 0.1],
    "share": [0.9, 0.1],
})


def test_sheaf_to_dot():
    sheaf, _ = ds.regression_sheaf(3)
    dot = ds.sheaf_to_dot(sheaf, name="regression")
    assert dot.startswith('digraph "regression"')
    assert dot.count("->") == 4
    assert '"part:line" -> "net:y" [label="prediction"]' in dot
    assert "shape=box" in dot


def test_lattice_to_dot():
    sheaf = ds.subsystem_sheaf_from_dag(ds.dsem_dag(fork), fork)
    dot = ds.lattice_to_dot(sheaf)
    assert '"{A,B}" -> "{A}"' in dot
    assert '"{A,B,C}" -> "{A,C}"' in dot
    assert dot.count("->") == 4


def test_plot_residuals():
    attribution = ds.attribute_residuals(report)
    with TemporaryDirectory(prefix="dsem-sheaf-") as tmpdir:
        ds.plot_residuals(tmpdir, report, attribution, radius=1.0)
        assert check_viz(tmpdir)
        with open(path.join(tmpdir, "index.html")) as handle:
            html = handle.read()
    assert "obs:X:0" in html
    assert 'class="outlier"' in html


def test_plot_empty_report():
    empty = report.iloc[:0]
    with TemporaryDirectory(prefix="dsem-sheaf-") as tmpdir:
        folder = path.join(tmpdir, "report")
        ds.plot_residuals(folder, empty)
        assert check_viz(folder)
        with open(path.join(folder, "index.html")) as handle:
            assert "nothing to report" in handle.read()
