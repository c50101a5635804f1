"""Formats, types and errors for DSEM sheaf models."""

from collections import namedtuple
import pandas as pd

FREE = "free"
"""Marker for a coefficient that has to be estimated."""

SIGNS = ("+", "-", "?")
TRANSFORMS = ("none", "log_center")

REQ_MODEL_FIELDS = pd.Series(["variables", "paths"])
REQ_PATH_FIELDS = pd.Series(["from", "to"])


class DsemSheafError(ValueError):
    """Base class for all errors raised by dsem-sheaf."""


class UnknownVariable(DsemSheafError):
    pass


class LagNotDeclared(DsemSheafError):
    pass


class FreeCoefficientPresent(DsemSheafError):
    pass


class SingularLink(DsemSheafError):
    pass


class NotPositiveDefinite(DsemSheafError):
    pass


class MissingData(DsemSheafError):
    pass


class NonConvergence(DsemSheafError):
    """The optimizer stopped before meeting its tolerances.

    The best iterate found so far is attached as `result`.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DimensionMismatch(DsemSheafError):
    pass


class InvalidNetlist(DsemSheafError):
    pass


class UnknownCell(DsemSheafError):
    pass


class NotGlobal(DsemSheafError):
    pass


class NotSeriesStalk(DsemSheafError):
    pass


class OrderTooLarge(DsemSheafError):
    pass


class TooLarge(DsemSheafError):
    pass


class NotSurjective(DsemSheafError):
    pass


class NotInvariant(DsemSheafError):
    pass


class NonPositiveForLog(DsemSheafError):
    pass


class ParseError(DsemSheafError):
    """A model or data file could not be parsed."""

    def __init__(self, message, line=None, column=None):
        where = ""
        if line is not None:
            where = " (line %d" % line
            where += ", column %d)" % column if column is not None else ")"
        super().__init__(message + where)
        self.line = line
        self.column = column


Edge = namedtuple("Edge", ["source", "target", "lag", "coefficient", "sign"])
Edge.__new__.__defaults__ = (1, FREE, "?")

DsemSpec = namedtuple(
    "DsemSpec",
    ["variables", "lags", "edges", "ar_orders", "h", "transforms", "options"],
)
"""In-memory form of a DSEM model file.

`variables` and `lags` are tuples, `edges` a tuple of `Edge`,
`ar_orders` and `transforms` map variable names to the AR order of the
sheaf model and the data transform, `options` holds the remaining model
options (`p_norm`, `weights`, `solver`).
"""

PathMatrix = namedtuple("PathMatrix", ["index", "matrix"])
GmrfModel = namedtuple("GmrfModel", ["precision", "variance", "link"])
MLFit = namedtuple(
    "MLFit", ["coefficients", "sigma", "log_likelihood", "iterations"])

Diagnostic = namedtuple("Diagnostic", ["kind", "subject", "message"])
FunctorialityViolation = namedtuple(
    "FunctorialityViolation", ["lower", "middle", "upper", "max_error"])

PairResidual = namedtuple(
    "PairResidual", ["lower", "upper", "contribution", "coordinates"])

TieGroup = namedtuple("TieGroup", ["slots"])
"""Slots `(cell, start, stop)` that are constrained to be equal."""

ArPartSpec = namedtuple(
    "ArPartSpec", ["variable", "order", "coefficients", "n", "constant"])
ArPartSpec.__new__.__defaults__ = (None, None, False)
"""AR filter of one variable; `constant` builds the coefficients into the
filter instead of reading them from a coefficient net."""

ModelSheaf = namedtuple(
    "ModelSheaf",
    [
        "sheaf",
        "ties",
        "netlist",
        "series",
        "observations",
        "coefficients",
        "ar_coefficients",
        "fixed",
        "n",
        "ar_orders",
        "spec",
    ],
)
"""A DSEM pipeline sheaf with the bookkeeping needed to fit it.

`series` maps variables to net cells, `observations` maps variables to
the list of observation cells (one per time step), `coefficients` maps
edges to their coefficient net cells, `ar_coefficients` maps variables
to their AR coefficient net cells and `fixed` holds the values of the
numeric coefficients from the model file.
"""

SolveOptions = namedtuple(
    "SolveOptions",
    [
        "max_iterations",
        "gtol",
        "xtol",
        "restarts",
        "seed",
        "threads",
        "hasse_only",
        "strict",
    ],
)
SolveOptions.__new__.__defaults__ = (10000, 1e-8, 1e-10, 4, 0, 1, False, False)

SolveRequest = namedtuple(
    "SolveRequest",
    ["sheaf", "assignment", "ties", "frozen", "options", "initial"],
)
SolveRequest.__new__.__defaults__ = (None, None, SolveOptions(), None)
"""`ties=None` uses the tie groups recorded on the sheaf and `()` turns them
off; `frozen=None` freezes every cell of the assignment, otherwise it lists
cells or maps cells to boolean coordinate masks.
"""

Diagnostics = namedtuple(
    "Diagnostics",
    [
        "iterations",
        "converged",
        "restarts_used",
        "method",
        "non_unique",
        "message",
    ],
)

SolveResult = namedtuple(
    "SolveResult", ["assignment", "radius", "residuals", "diagnostics"])

FitResult = namedtuple(
    "FitResult",
    ["solve", "coefficients", "ar_coefficients", "series", "radius"],
)
"""Result of fitting a DSEM sheaf to data.

`coefficients` and `ar_coefficients` are DataFrames with one row per
edge and per AR lag, `series` is the completed table with an
`observed` mask in `series.attrs`.
"""

Centering = namedtuple("Centering", ["variable", "transform", "mean"])

DsemDag = namedtuple("DsemDag", ["graph", "members"])
"""Variable-level DAG with strongly connected components collapsed.

`graph` is a networkx DiGraph on component ids and `members` maps each
component id to the frozenset of variables it contains.
"""

SubsystemProjection = namedtuple(
    "SubsystemProjection", ["p", "codomain", "g", "witness"])
SubsystemProjection.__new__.__defaults__ = (None, None)

RunConfig = namedtuple(
    "RunConfig",
    [
        "command",
        "model",
        "data",
        "ar",
        "p_norm",
        "weights",
        "ties",
        "seed",
        "options",
        "output",
        "format",
    ],
)
