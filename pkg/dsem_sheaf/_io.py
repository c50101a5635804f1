"""Reading models and data, writing results."""

import json
import re
from loguru import logger
import numpy as np
import pandas as pd
from dsem_sheaf._formats_and_types import (
    FREE,
    REQ_MODEL_FIELDS,
    REQ_PATH_FIELDS,
    Centering,
    DsemSpec,
    Edge,
    FitResult,
    MissingData,
    NonPositiveForLog,
    ParseError,
)
from dsem_sheaf._dsem import dsem_spec
from dsem_sheaf._inference import residual_report
from dsem_sheaf._topology import assignment_to_json


def model_from_dict(raw: dict) -> DsemSpec:
    """Build a DSEM from the parsed content of a model file."""
    if not isinstance(raw, dict) or not REQ_MODEL_FIELDS.isin(list(raw)).all():
        raise ParseError("A model needs the fields %s."
                         % list(REQ_MODEL_FIELDS))
    try:
        variables, orders, transforms = [], {}, {}
        for entry in raw["variables"]:
            if isinstance(entry, str):
                entry = {"name": entry}
            variables.append(entry["name"])
            if "ar_order" in entry:
                orders[entry["name"]] = int(entry["ar_order"])
            transforms[entry["name"]] = entry.get("transform", "none")
        edges = []
        for path in raw["paths"]:
            if not REQ_PATH_FIELDS.isin(list(path)).all():
                raise ParseError("Every path needs the fields %s."
                                 % list(REQ_PATH_FIELDS))
            edges.append(Edge(
                path["from"],
                path["to"],
                int(path.get("lag", 1)),
                path.get("coefficient", FREE),
                path.get("sign", "?"),
            ))
        options = dict(raw.get("options", {}))
    except (KeyError, TypeError, ValueError) as error:
        if isinstance(error, ParseError):
            raise
        raise ParseError("Malformed model entry: %s." % error)
    return dsem_spec(
        variables,
        edges,
        lags=options.pop("lags", None),
        ar_orders=orders,
        h=options.pop("h", 1.0),
        transforms=transforms,
        options=options,
    )


def model_to_dict(spec: DsemSpec) -> dict:
    return {
        "variables": [
            {"name": v, "ar_order": spec.ar_orders[v],
             "transform": spec.transforms[v]}
            for v in spec.variables
        ],
        "paths": [
            {"from": e.source, "to": e.target, "lag": e.lag,
             "coefficient": e.coefficient, "sign": e.sign}
            for e in spec.edges
        ],
        "options": dict(spec.options, h=spec.h, lags=list(spec.lags)),
    }


def ingest_model(path: str) -> DsemSpec:
    """Read a DSEM model file (JSON)."""
    with open(path, mode="r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as error:
        raise ParseError("`%s` is not valid JSON: %s." % (path, error.msg),
                         error.lineno, error.colno)
    spec = model_from_dict(raw)
    logger.info("Read model with {} variables and {} paths from {}.",
                len(spec.variables), len(spec.edges), path)
    return spec


def ingest_data(path: str, spec: DsemSpec) -> pd.DataFrame:
    """Read a data table and apply the per-variable transforms.

    The CSV needs a header and an integer `time` column; empty cells are
    missing observations. Columns with the `log_center` transform are
    log-transformed and centered over their observed entries. The
    centering statistics are stored as a list of `Centering` in
    `data.attrs["centering"]`.
    """
    try:
        data = pd.read_csv(path)
    except pd.errors.ParserError as error:
        match = re.search(r"line (\d+)", str(error))
        raise ParseError("Could not read `%s`: %s" % (path, error),
                         int(match.group(1)) if match else None)
    except pd.errors.EmptyDataError:
        raise ParseError("`%s` is empty." % path, 1, 1)
    if "time" not in data.columns:
        raise ParseError("The data need a `time` column.", 1, 1)
    if not pd.api.types.is_integer_dtype(data["time"]):
        raise ParseError("The `time` column must hold integers.", 1,
                         list(data.columns).index("time") + 1)
    data = data.set_index("time")
    return transform_data(data, spec)


def transform_data(data: pd.DataFrame, spec: DsemSpec) -> pd.DataFrame:
    missing = [v for v in spec.variables if v not in data.columns]
    if missing:
        raise MissingData("The data have no column for %s." % missing)
    out = data[list(spec.variables)].astype(float)
    centering = []
    for v in spec.variables:
        if spec.transforms[v] == "log_center":
            observed = out[v].dropna()
            if (observed <= 0).any():
                raise NonPositiveForLog(
                    "`%s` has non-positive values and cannot be logged." % v)
            logged = np.log(out[v])
            mean = float(logged.mean())
            out[v] = logged - mean
            centering.append(Centering(v, "log_center", mean))
        else:
            centering.append(Centering(v, "none", 0.0))
    out.attrs["centering"] = centering
    logger.info("Read {} time points, {} of {} observations missing.",
                len(out), int(out.isna().sum().sum()), out.size)
    return out


def untransform(data: pd.DataFrame, centering) -> pd.DataFrame:
    """Undo `log_center` transforms with the recorded statistics."""
    out = data.copy()
    for c in centering:
        if c.transform == "log_center" and c.variable in out.columns:
            out[c.variable] = np.exp(out[c.variable] + c.mean)
    return out


def _native(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError("Cannot serialize %s." % type(obj))


def write_json(obj, path: str) -> None:
    with open(path, mode="w", encoding="utf-8") as handle:
        json.dump(obj, handle, indent=2, default=_native)


def result_to_json(result: FitResult, top: int = 10, centering=None) -> dict:
    """The JSON report of a fit with stable field names."""
    report = residual_report(result, top=top)
    diagnostics = result.solve.diagnostics._asdict()
    return {
        "radius": result.radius,
        "coefficients": result.coefficients.to_dict(orient="records"),
        "ar_coefficients": result.ar_coefficients.to_dict(orient="records"),
        "residual_top": report.to_dict(orient="records"),
        "diagnostics": diagnostics,
        "centering": [c._asdict() for c in centering or []],
        "assignment": assignment_to_json(result.solve.assignment),
    }
