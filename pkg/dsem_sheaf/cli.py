"""Command line setup."""

import argparse
import json
from os.path import exists
import sys
from loguru import logger
import dsem_sheaf
from dsem_sheaf._formats_and_types import (
    DsemSheafError,
    FreeCoefficientPresent,
    RunConfig,
    SolveOptions,
)
from dsem_sheaf._dsem import is_free, simulate
from dsem_sheaf._io import (
    ingest_data,
    ingest_model,
    result_to_json,
    untransform,
    write_json,
)
from dsem_sheaf._inference import (
    attribute_residuals,
    compare_ar_orders,
    completed_series,
    fit,
    impute,
    predict,
    residual_report,
)
from dsem_sheaf._sheaf_builder import build_model_sheaf, induced_assignment
from dsem_sheaf._subsystems import (
    dsem_dag,
    in_closed_sets,
    subsystem_sheaf_from_dag,
)
from dsem_sheaf._topology import (
    assignment_from_json,
    check_functoriality,
    consistency_radius,
)
from dsem_sheaf._viz import lattice_to_dot, plot_residuals, sheaf_to_dot

LEVELS = ["WARNING", "INFO", "DEBUG"]


def _existing(path):
    if not exists(path):
        raise argparse.ArgumentTypeError("`%s` does not exist." % path)
    return path


def _weight(text):
    name, _, value = text.partition("=")
    try:
        return name, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(
            "Weights look like `VARIABLE=VALUE`, got `%s`." % text)


class Commands(object):
    """Registry of subcommands, each a function taking a `RunConfig`."""

    def __init__(self, name, version, description):
        self.parser = argparse.ArgumentParser(prog=name,
                                              description=description)
        self.parser.add_argument("--version", action="version",
                                 version="%(prog)s " + version)
        self.subparsers = self.parser.add_subparsers(dest="command")
        self.subparsers.required = True

    def register_function(self, function, parameters, parameter_descriptions,
                          name, description):
        sub = self.subparsers.add_parser(name, help=description,
                                         description=description)
        for param, kwargs in parameters.items():
            sub.add_argument("--" + param.replace("_", "-"), dest=param,
                             help=parameter_descriptions.get(param), **kwargs)
        sub.add_argument("-v", "--verbose", action="count", default=0,
                         help="Log pipeline stages (-v) or solver detail "
                         "(-vv).")
        sub.set_defaults(func=function)


def run_config(args, spec=None) -> RunConfig:
    """Merge the command line over the options of the model file."""
    model_options = dict(spec.options) if spec is not None else {}
    solver = dict(model_options.get("solver", {}))
    for key in ("max_iterations", "gtol", "xtol", "restarts", "threads"):
        if getattr(args, key, None) is not None:
            solver[key] = getattr(args, key)
    if getattr(args, "seed", None) is not None:
        solver["seed"] = args.seed
    weights = dict(model_options.get("weights", {}))
    weights.update(dict(getattr(args, "weight", None) or []))
    p_norm = getattr(args, "p_norm", None)
    return RunConfig(
        command=args.command,
        model=getattr(args, "model", None),
        data=getattr(args, "data", None),
        ar=getattr(args, "ar", None),
        p_norm=p_norm if p_norm is not None else model_options.get(
            "p_norm", 2.0),
        weights=weights,
        ties=not getattr(args, "no_ties", False),
        seed=solver.get("seed", 0),
        options=SolveOptions(**{k: v for k, v in solver.items()
                                if k in SolveOptions._fields}),
        output=getattr(args, "output", None),
        format=getattr(args, "format", "json"),
    )


def _model_and_data(args):
    spec = ingest_model(args.model)
    data = ingest_data(args.data, spec)
    config = run_config(args, spec)
    model = build_model_sheaf(spec, len(data), ar=config.ar,
                              labels=list(data.index),
                              weights=config.weights, p=config.p_norm)
    return spec, data, config, model


def _write_fit(result, data, args):
    centering = data.attrs.get("centering", [])
    write_json(result_to_json(result, centering=centering), args.output)
    if getattr(args, "series", None):
        series = completed_series(result._replace(
            series=_untransformed(result.series, centering)))
        series.to_csv(args.series, index=False)


def _untransformed(series, centering):
    out = untransform(series, centering)
    out.attrs = series.attrs
    return out


def simulate_command(args):
    spec = ingest_model(args.model)
    config = run_config(args, spec)
    table = simulate(spec, args.steps, noise_sd=args.noise, seed=config.seed)
    table.to_csv(args.output)
    logger.info("Wrote {} simulated time points to {}.", len(table),
                args.output)
    return 0


def fit_command(args):
    spec, data, config, model = _model_and_data(args)
    result = fit(model, data, hardcode=args.hardcode, ties=config.ties,
                 options=config.options)
    _write_fit(result, data, args)
    return 0


def predict_command(args):
    spec, data, config, model = _model_and_data(args)
    fitted = fit(model, data, hardcode=args.hardcode, ties=config.ties,
                 options=config.options)
    result = predict(model, data, args.target, fitted=fitted,
                     options=config.options)
    _write_fit(result, data, args)
    return 0


def impute_command(args):
    spec, data, config, model = _model_and_data(args)
    try:
        result = impute(model, data, options=config.options)
    except FreeCoefficientPresent:
        logger.info("Estimating the free coefficients first.")
        fitted = fit(model, data, ties=config.ties, options=config.options)
        result = impute(model, data, fitted=fitted, options=config.options)
    _write_fit(result, data, args)
    return 0


def residuals_command(args):
    spec, data, config, model = _model_and_data(args)
    result = fit(model, data, hardcode=args.hardcode, ties=config.ties,
                 options=config.options)
    report = residual_report(result, top=args.top)
    attribution = attribute_residuals(residual_report(result))
    if config.format == "csv":
        report.to_csv(args.output, index=False)
    else:
        write_json({
            "radius": result.radius,
            "residual_top": report.to_dict(orient="records"),
            "attribution": attribution.to_dict(orient="records"),
        }, args.output)
    if args.html:
        plot_residuals(args.html, report, attribution, result.radius)
    return 0


def subsystems_command(args):
    spec = ingest_model(args.model)
    dag = dsem_dag(spec)
    numeric = not any(is_free(e.coefficient) for e in spec.edges)
    sheaf = subsystem_sheaf_from_dag(dag, spec if numeric else None)
    sets = in_closed_sets(dag)
    write_json({
        "sets": [sorted(s) for s in sets],
        "hasse": [list(e) for e in sheaf.poset.comparable_pairs(True)],
        "commuting": [
            {"lower": lo, "upper": up, "residual": r}
            for (lo, up), r in sheaf.provenance["commuting"].items()
        ],
    }, args.output)
    if args.dot:
        with open(args.dot, mode="w", encoding="utf-8") as out:
            out.write(lattice_to_dot(sheaf))
    return 0


def check_command(args):
    spec = ingest_model(args.model)
    report = {"model": "valid"}
    status = 0
    if args.data:
        data = ingest_data(args.data, spec)
        config = run_config(args, spec)
        model = build_model_sheaf(spec, len(data), ar=config.ar,
                                  labels=list(data.index),
                                  weights=config.weights, p=config.p_norm)
        violations = check_functoriality(model.sheaf)
        report["functoriality_violations"] = [v._asdict() for v in violations]
        status = 1 if violations else 0
        if args.assignment:
            with open(args.assignment, encoding="utf-8") as handle:
                raw = json.load(handle)
            assignment = assignment_from_json(
                model.sheaf, raw.get("assignment", raw))
        else:
            assignment = induced_assignment(model, spec, data)
        radius = consistency_radius(model.sheaf, assignment)
        report["radius"] = radius
        report["section"] = radius <= args.tol
        if not args.assignment and radius > args.tol:
            status = 1
        if args.dot:
            with open(args.dot, mode="w", encoding="utf-8") as out:
                out.write(sheaf_to_dot(model.sheaf))
    if args.output:
        write_json(report, args.output)
    for key, value in report.items():
        logger.info("{}: {}", key, value)
    return status


def compare_command(args):
    spec = ingest_model(args.model)
    data = ingest_data(args.data, spec)
    config = run_config(args, spec)
    table = compare_ar_orders(spec, data, orders=args.orders,
                              options=config.options)
    table.to_csv(args.output, index_label="coefficient")
    return 0


MODEL = {"type": _existing, "required": True}
DATA = {"type": _existing, "required": True}
OUTPUT = {"type": str, "required": True}
SOLVER = {
    "ar": {"type": int, "default": None},
    "p_norm": {"type": float, "default": None},
    "weight": {"type": _weight, "action": "append"},
    "no_ties": {"action": "store_true"},
    "seed": {"type": int, "default": None},
    "max_iterations": {"type": int, "default": None},
    "gtol": {"type": float, "default": None},
    "xtol": {"type": float, "default": None},
    "restarts": {"type": int, "default": None},
    "threads": {"type": int, "default": None},
}
SOLVER_DESCRIPTIONS = {
    "model": "The DSEM model file (JSON).",
    "data": "The data table (CSV with a `time` column).",
    "output": "Where to write the result.",
    "ar": "AR order for every variable, 0 for fixed persistence only. "
    "Defaults to the orders in the model file.",
    "p_norm": "Exponent of the consistency radius.",
    "weight": "Weight of a variable's stalks as `VARIABLE=VALUE`.",
    "no_ties": "Let the copies of a net move independently.",
    "seed": "Seed for simulation and solver restarts.",
    "max_iterations": "Iteration limit per solver start.",
    "gtol": "Gradient tolerance.",
    "xtol": "Step tolerance.",
    "restarts": "Number of random restarts.",
    "threads": "Threads used for solver restarts.",
    "hardcode": "Hold the numeric coefficients of the model fixed.",
    "series": "Also write the completed series as CSV.",
}

commands = Commands(
    "dsem-sheaf",
    dsem_sheaf.__version__,
    "Fit, predict and analyze dynamic structural equation models with "
    "sheaves.",
)

commands.register_function(
    function=simulate_command,
    parameters={
        "model": MODEL,
        "steps": {"type": int, "required": True},
        "noise": {"type": float, "default": 0.0},
        "seed": {"type": int, "default": None},
        "output": OUTPUT,
    },
    parameter_descriptions=dict(
        SOLVER_DESCRIPTIONS,
        steps="Number of time steps.",
        noise="Standard deviation of the innovations.",
    ),
    name="simulate",
    description="Simulate the model and write the series as CSV.",
)

for name, function, description in [
    ("fit", fit_command, "Estimate coefficients and missing observations."),
    ("impute", impute_command,
     "Fill in missing observations with coefficients held fixed."),
]:
    commands.register_function(
        function=function,
        parameters=dict(model=MODEL, data=DATA, output=OUTPUT,
                        series={"type": str, "default": None},
                        hardcode={"action": "store_true"}, **SOLVER),
        parameter_descriptions=SOLVER_DESCRIPTIONS,
        name=name,
        description=description,
    )

commands.register_function(
    function=predict_command,
    parameters=dict(model=MODEL, data=DATA, output=OUTPUT,
                    target={"type": str, "action": "append",
                            "required": True},
                    series={"type": str, "default": None},
                    hardcode={"action": "store_true"}, **SOLVER),
    parameter_descriptions=dict(
        SOLVER_DESCRIPTIONS,
        target="Variable whose observations are hidden and predicted.",
    ),
    name="predict",
    description="Predict the series of target variables from the others.",
)

commands.register_function(
    function=residuals_command,
    parameters=dict(model=MODEL, data=DATA, output=OUTPUT,
                    top={"type": int, "default": 20},
                    format={"choices": ["json", "csv"], "default": "json"},
                    html={"type": str, "default": None},
                    hardcode={"action": "store_true"}, **SOLVER),
    parameter_descriptions=dict(
        SOLVER_DESCRIPTIONS,
        top="Number of pairs to report.",
        format="Report format.",
        html="Directory for an HTML report.",
    ),
    name="residuals",
    description="Rank the contributions to the consistency radius.",
)

commands.register_function(
    function=subsystems_command,
    parameters={"model": MODEL, "output": OUTPUT,
                "dot": {"type": str, "default": None}},
    parameter_descriptions=dict(SOLVER_DESCRIPTIONS,
                                dot="Also write the lattice in DOT format."),
    name="subsystems",
    description="List the subsystems given by the in-closed variable sets.",
)

commands.register_function(
    function=check_command,
    parameters=dict(
        model=MODEL,
        data={"type": _existing, "default": None},
        assignment={"type": _existing, "default": None},
        output={"type": str, "default": None},
        tol={"type": float, "default": 1e-10},
        dot={"type": str, "default": None},
        ar=SOLVER["ar"],
        p_norm=SOLVER["p_norm"],
        weight=SOLVER["weight"],
    ),
    parameter_descriptions=dict(
        SOLVER_DESCRIPTIONS,
        data="Complete data whose induced assignment should be a section.",
        assignment="A global assignment (e.g. the output of `fit`).",
        tol="Largest radius still counted as a section.",
        dot="Also write the sheaf in DOT format.",
    ),
    name="check",
    description="Validate a model, its sheaf and optionally an assignment.",
)

commands.register_function(
    function=compare_command,
    parameters=dict(model=MODEL, data=DATA, output=OUTPUT,
                    orders={"type": int, "nargs": "+", "default": [0, 1, 2]},
                    seed=SOLVER["seed"], restarts=SOLVER["restarts"],
                    threads=SOLVER["threads"]),
    parameter_descriptions=dict(SOLVER_DESCRIPTIONS,
                                orders="AR orders to compare."),
    name="compare",
    description="Compare coefficients and radii across AR orders.",
)


def main(argv=None) -> int:
    """Run the command line and return the exit code."""
    try:
        args = commands.parser.parse_args(argv)
    except SystemExit as error:
        return error.code or 0
    logger.remove()
    logger.add(sys.stderr, level=LEVELS[min(args.verbose, 2)],
               format="{level}: {message}")
    try:
        return args.func(args)
    except (DsemSheafError, OSError) as error:
        logger.error(str(error))
        return 1
