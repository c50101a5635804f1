"""Render sheaves, lattices and residual reports."""

from os import makedirs
from os.path import join
from jinja2 import Environment, PackageLoader, select_autoescape
import pandas as pd
from dsem_sheaf._topology import SheafDiagram

env = Environment(
    loader=PackageLoader("dsem_sheaf", "assets/templates"),
    autoescape=select_autoescape(["html"]),
    trim_blocks=True,
    lstrip_blocks=True,
)

SHAPES = {"part": "box", "net": "ellipse", "observation": "point"}


def _escape(text):
    return str(text).replace('"', '\\"')


def sheaf_to_dot(sheaf: SheafDiagram, name: str = "sheaf") -> str:
    """DOT source for the Hasse diagram of a sheaf, lower cells at the bottom."""
    kinds = sheaf.provenance.get("pair_kinds", {})
    cells = [
        {
            "id": _escape(c),
            "label": _escape(sheaf.info.get(c, {}).get("name", c)),
            "dim": sheaf.dim(c),
            "shape": SHAPES.get(sheaf.info.get(c, {}).get("kind"), "ellipse"),
        }
        for c in sheaf.cells
    ]
    edges = [
        {"lower": _escape(lo), "upper": _escape(up),
         "kind": kinds.get((lo, up), "")}
        for lo, up in sheaf.poset.comparable_pairs(hasse_only=True)
    ]
    return env.get_template("sheaf.dot").render(
        name=name, cells=cells, edges=edges)


def lattice_to_dot(sheaf: SheafDiagram) -> str:
    """DOT source for the lattice of a subsystem sheaf."""
    cells = [{"id": _escape(c), "label": _escape(c)} for c in sheaf.cells]
    edges = [(_escape(lo), _escape(up))
             for lo, up in sheaf.poset.comparable_pairs(hasse_only=True)]
    return env.get_template("lattice.dot").render(cells=cells, edges=edges)


def _records(table):
    rows = table.to_dict(orient="records")
    for row in rows:
        for key, value in row.items():
            if not isinstance(value, str) and pd.isna(value):
                row[key] = None
    return rows


def plot_residuals(
    output_dir: str,
    report: pd.DataFrame,
    attribution: pd.DataFrame = None,
    radius: float = 0.0,
    top: int = 50,
) -> None:
    """Write the residual report as `index.html`."""
    makedirs(output_dir, exist_ok=True)
    html = env.get_template("residuals.html").render(
        title="Consistency radius contributions",
        radius=radius,
        rows=_records(report.head(top)),
        attribution=_records(attribution) if attribution is not None else [],
    )
    with open(join(output_dir, "index.html"), mode="w",
              encoding="utf-8") as out:
        out.write(html)
