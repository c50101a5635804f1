"""Consistency radius minimization and the DSEM tasks built on it."""

from concurrent.futures import ThreadPoolExecutor
from loguru import logger
import networkx as nx
import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import least_squares, minimize as _minimize
from scipy.sparse.linalg import lsmr
from dsem_sheaf._formats_and_types import (
    Diagnostics,
    DimensionMismatch,
    DsemSheafError,
    FitResult,
    FreeCoefficientPresent,
    MissingData,
    ModelSheaf,
    NonConvergence,
    SolveOptions,
    SolveRequest,
    SolveResult,
    UnknownCell,
    UnknownVariable,
)
from dsem_sheaf._dsem import is_free
from dsem_sheaf._sheaf_builder import build_model_sheaf, tie_groups
from dsem_sheaf._topology import (
    Assignment,
    consistency_radius,
    residual_breakdown,
)

DENSE_LIMIT = 5 * 10 ** 6
"""Largest Jacobian (rows x columns) handled as a dense array."""

PROBE_TOL = 1e-6


def _offsets(sheaf):
    offsets, i = {}, 0
    for c in sheaf.cells:
        offsets[c] = slice(i, i + sheaf.dim(c))
        i += sheaf.dim(c)
    return offsets, i


def _fill_from_partners(graph, z, known, frozen):
    for comp in nx.connected_components(graph):
        comp = sorted(comp)
        source = [i for i in comp if known[i]]
        for i in comp:
            if source and not known[i] and not frozen[i]:
                z[i] = z[source[0]]


class Objective(object):
    """The p-th power of the consistency radius over the free parameters.

    Free coordinates are parameterized by one entry of `theta` per tie
    group (or per untied coordinate); all other coordinates stay at their
    frozen values. For p = 2 the value is the squared radius and
    `residuals`/`jacobian` give the least squares form.
    """

    def __init__(self, request: SolveRequest):
        sheaf = request.sheaf
        self.sheaf = sheaf
        self.p = sheaf.p
        self.options = request.options
        self.offsets, size = _offsets(sheaf)
        z, known = self._start(request, size)
        frozen = self._frozen(request, size)
        for cell, value in request.assignment.values.items():
            s = self.offsets[cell]
            z[s] = np.where(frozen[s], value, z[s])
        ties = (tie_groups(sheaf) if request.ties is None
                else list(request.ties))
        if not ties:
            # untied copies start from the value of their net
            _fill_from_partners(
                self._tie_graph(tie_groups(sheaf)), z, known, frozen)
        param = self._parameterize(
            self._tie_graph(ties), z, known, frozen, size)
        self.base = z
        self.free = np.flatnonzero(param >= 0)
        self.n_params = int(param.max()) + 1 if len(self.free) else 0
        self.theta0 = np.zeros(self.n_params)
        self.theta0[param[self.free]] = z[self.free]
        self._param = param[self.free]
        self._select = sp.csr_matrix(
            (np.ones(len(self.free)), (self.free, self._param)),
            shape=(size, self.n_params))
        self._build_pairs(size)

    def _start(self, request, size):
        z = np.zeros(size)
        known = np.zeros(size, dtype=bool)
        sources = [request.assignment]
        if request.initial is not None:
            sources.append(request.initial)
        for source in sources:
            values = (source.values if isinstance(source, Assignment)
                      else source)
            for cell, value in values.items():
                if cell not in self.offsets:
                    raise UnknownCell("Unknown cell `%s`." % (cell,))
                value = np.asarray(value, dtype=float).reshape(-1)
                s = self.offsets[cell]
                if len(value) != s.stop - s.start:
                    raise DimensionMismatch(
                        "Value for `%s` has length %d, the stalk has "
                        "dimension %d." % (cell, len(value), s.stop - s.start))
                ok = ~np.isnan(value)
                z[s][ok] = value[ok]
                known[s] |= ok
        return z, known

    def _frozen(self, request, size):
        mask = np.zeros(size, dtype=bool)
        frozen = request.frozen
        if frozen is None:
            frozen = request.assignment.support
        items = (frozen.items() if isinstance(frozen, dict)
                 else ((c, True) for c in frozen))
        for cell, m in items:
            if cell not in self.offsets:
                raise UnknownCell("Unknown cell `%s`." % (cell,))
            if cell not in request.assignment:
                raise DsemSheafError("Frozen cell `%s` has no value." % (cell,))
            s = self.offsets[cell]
            mask[s] |= np.broadcast_to(np.asarray(m, dtype=bool),
                                       (s.stop - s.start,))
        return mask

    def _tie_graph(self, groups):
        graph = nx.Graph()
        for group in groups:
            first = None
            for cell, start, stop in group.slots:
                s = self.offsets[cell]
                idx = np.arange(s.start + start, s.start + stop)
                if first is None:
                    first = idx
                else:
                    graph.add_edges_from(zip(first.tolist(), idx.tolist()))
        return graph

    def _parameterize(self, share, z, known, frozen, size):
        param = np.full(size, -1)
        grouped = np.zeros(size, dtype=bool)
        count = 0
        for comp in nx.connected_components(share):
            comp = sorted(comp)
            grouped[comp] = True
            fixed = [i for i in comp if frozen[i]]
            if fixed:
                value = z[fixed[0]]
                if np.any(z[fixed] != value):
                    logger.warning(
                        "Tied slots are frozen at different values; using "
                        "{}.", value)
                z[comp] = value
                continue
            source = [i for i in comp if known[i]]
            z[comp] = z[source[0]] if source else 0.0
            param[comp] = count
            count += 1
        for i in np.flatnonzero(~grouped & ~frozen):
            param[i] = count
            count += 1
        return param

    def _build_pairs(self, size):
        rows, cols, vals, const = [], [], [], []
        self._general = []
        m = 0
        for lo, up in self.sheaf.pairs(self.options.hasse_only):
            rmap = self.sheaf.restriction(lo, up)
            alpha = self.sheaf.weight(up)
            if not rmap.is_affine:
                self._general.append((self.offsets[lo], self.offsets[up],
                                      rmap, alpha))
                continue
            d = rmap.target_dim
            i, j = np.nonzero(rmap.matrix)
            rows += [m + np.arange(d), m + i]
            cols += [self.offsets[up].start + np.arange(d),
                     self.offsets[lo].start + j]
            vals += [np.full(d, alpha), -alpha * rmap.matrix[i, j]]
            const.append(-alpha * rmap.offset)
            m += d
        cat = (lambda x, t: np.concatenate(x).astype(t) if x
               else np.zeros(0, t))
        self._affine = sp.csr_matrix(
            (cat(vals, float), (cat(rows, int), cat(cols, int))),
            shape=(m, size))
        self._offset = cat(const, float)
        self._affine_theta = (self._affine @ self._select).tocsr()
        self._size = size

    def vector(self, theta):
        z = self.base.copy()
        z[self.free] = np.asarray(theta, dtype=float)[self._param]
        return z

    def assignment(self, theta) -> Assignment:
        z = self.vector(theta)
        return Assignment(self.sheaf, {c: z[s] for c, s in self.offsets.items()})

    def residuals(self, theta) -> np.ndarray:
        z = self.vector(theta)
        out = [self._affine @ z + self._offset]
        for lo, up, rmap, alpha in self._general:
            out.append(alpha * (z[up] - rmap(z[lo])))
        return np.concatenate(out)

    def jacobian(self, theta):
        """Sparse Jacobian of `residuals` with respect to `theta`."""
        if not self._general:
            return self._affine_theta
        z = self.vector(theta)
        rows, cols, vals = [], [], []
        m = 0
        for lo, up, rmap, alpha in self._general:
            d = rmap.target_dim
            J = rmap.jacobian(z[lo])
            i, j = np.nonzero(J)
            rows += [m + np.arange(d), m + i]
            cols += [up.start + np.arange(d), lo.start + j]
            vals += [np.full(d, alpha), -alpha * J[i, j]]
            m += d
        general = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, self._size))
        return sp.vstack([self._affine_theta,
                          general @ self._select]).tocsr()

    def value(self, theta) -> float:
        return float(np.sum(np.abs(self.residuals(theta)) ** self.p))

    def gradient(self, theta) -> np.ndarray:
        r = self.residuals(theta)
        w = self.p * np.abs(r) ** (self.p - 1) * np.sign(r)
        return np.asarray(self.jacobian(theta).T @ w).reshape(-1)

    def is_affine(self) -> bool:
        """Whether the residuals are affine in the free parameters."""
        if not self._general or self.n_params == 0:
            return True
        rng = np.random.default_rng(self.options.seed)
        t0 = self.theta0
        t1 = t0 + rng.normal(size=self.n_params)
        J0, J1 = self.jacobian(t0), self.jacobian(t1)
        scale = 1.0 + abs(J0).max()
        if abs(J0 - J1).max() > PROBE_TOL * scale:
            return False
        r0, r1 = self.residuals(t0), self.residuals(t1)
        pred = r0 + J0 @ (t1 - t0)
        return np.abs(pred - r1).max(initial=0) <= PROBE_TOL * (
            1.0 + np.abs(r1).max(initial=0))

    def _dense(self):
        rows = self._affine.shape[0] + sum(
            rmap.target_dim for _, _, rmap, _ in self._general)
        return rows * self.n_params <= DENSE_LIMIT


def _solve_affine(obj):
    r0 = obj.residuals(obj.theta0)
    J = obj.jacobian(obj.theta0)
    if obj._dense():
        delta, _, rank, _ = np.linalg.lstsq(J.toarray(), -r0, rcond=None)
        non_unique = rank < obj.n_params
    else:
        delta = lsmr(J, -r0, atol=1e-14, btol=1e-14,
                     maxiter=obj.options.max_iterations)[0]
        non_unique = False
    return obj.theta0 + delta, 1, True, non_unique, "lstsq"


def _run(obj, start):
    o = obj.options
    if obj.p == 2.0:
        dense = obj._dense()
        res = least_squares(
            obj.residuals,
            start,
            jac=(lambda t: obj.jacobian(t).toarray()) if dense
            else obj.jacobian,
            method="trf",
            gtol=o.gtol,
            xtol=o.xtol,
            ftol=o.xtol,
            max_nfev=o.max_iterations,
        )
        return res.x, res.nfev, res.status > 0
    res = _minimize(
        lambda t: (obj.value(t), obj.gradient(t)),
        start,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": o.max_iterations, "gtol": o.gtol},
    )
    return res.x, res.nit, bool(res.success)


def _solve_nonlinear(obj):
    o = obj.options
    rng = np.random.default_rng(o.seed)
    starts = [obj.theta0] + [
        obj.theta0 + rng.normal(scale=0.5 * (1 + np.abs(obj.theta0)))
        for _ in range(o.restarts)]
    with ThreadPoolExecutor(max_workers=max(1, o.threads)) as pool:
        runs = list(pool.map(lambda s: _run(obj, s), starts))
    values = [obj.value(theta) for theta, *_ in runs]
    for i, v in enumerate(values):
        logger.debug("Start {} finished with value {:.6g}.", i, v)
    best = int(np.argmin(values))
    theta, iterations, converged = runs[best]
    if obj.value(obj.theta0) < values[best]:
        theta = obj.theta0
    non_unique = False
    if obj._dense():
        J = obj.jacobian(theta).toarray()
        non_unique = np.linalg.matrix_rank(J) < obj.n_params
    method = "trf" if obj.p == 2.0 else "l-bfgs-b"
    return theta, iterations, converged, non_unique, method, len(starts)


def minimize(request: SolveRequest) -> SolveResult:
    """Minimize the consistency radius over the free slots of a request.

    Parameters
    ----------
    request : SolveRequest
        The sheaf, the partial assignment, tie groups, frozen slots and
        solver options.

    Returns
    -------
    SolveResult
        A global assignment, its consistency radius, the per-pair residuals
        and optimizer diagnostics.

    Notes
    -----
    Problems whose residuals are affine in the free slots are solved
    directly as linear least squares (minimum-norm when the solution is not
    unique). Otherwise `scipy.optimize.least_squares` (p = 2) or L-BFGS-B
    runs from the initialization and from `restarts` seeded perturbations
    of it. The initialization is returned when no run improves on it.
    """
    obj = Objective(request)
    o = request.options
    restarts = 0
    if obj.n_params == 0:
        theta, iterations, converged, non_unique, method = (
            obj.theta0, 0, True, False, "none")
    elif obj.p == 2.0 and obj.is_affine():
        theta, iterations, converged, non_unique, method = _solve_affine(obj)
    else:
        theta, iterations, converged, non_unique, method, restarts = (
            _solve_nonlinear(obj))
    assignment = obj.assignment(theta)
    radius = consistency_radius(request.sheaf, assignment,
                                hasse_only=o.hasse_only)
    message = "converged" if converged else "iteration limit reached"
    if non_unique:
        message += ", minimizer not unique"
        logger.warning("The minimizer is not unique (rank-deficient "
                       "Jacobian); returning the minimum-norm step.")
    result = SolveResult(
        assignment=assignment,
        radius=radius,
        residuals=residual_breakdown(request.sheaf, assignment,
                                     hasse_only=o.hasse_only),
        diagnostics=Diagnostics(iterations, converged, restarts, method,
                                non_unique, message),
    )
    logger.info("Minimized over {} parameters with {}: radius {:.6g}.",
                obj.n_params, method, radius)
    if not converged:
        logger.warning("The optimizer did not converge after {} iterations.",
                       iterations)
        if o.strict:
            raise NonConvergence(
                "No convergence after %d iterations." % iterations, result)
    return result


def _observations(model, data):
    spec = model.spec
    missing = [v for v in spec.variables if v not in data.columns]
    if missing:
        raise MissingData("The data have no column for %s." % missing)
    if len(data) != model.n:
        raise MissingData("The data have %d rows, the model expects %d."
                          % (len(data), model.n))
    values = {}
    for v in spec.variables:
        series = data[v].to_numpy(dtype=float)
        for t, cell in enumerate(model.observations[v]):
            if not np.isnan(series[t]):
                values[cell] = series[t:t + 1]
    return values


def _initial_nets(model, data):
    filled = data[list(model.spec.variables)].astype(float).interpolate(
        limit_area="inside").fillna(0.0)
    init = {model.series[v]: filled[v].to_numpy()
            for v in model.spec.variables}
    for v, cell in model.ar_coefficients.items():
        a = np.zeros(model.ar_orders[v])
        a[0] = 1.0
        init[cell] = a
    for cell in model.coefficients.values():
        init[cell] = np.zeros(1)
    return init


def _frozen_coefficients(model, hardcode, frozen):
    values = {c: np.asarray(v, dtype=float) for c, v in (frozen or {}).items()}
    if hardcode:
        for cell, fixed in model.fixed.items():
            values.setdefault(cell, fixed)
    return values


def fit(
    model: ModelSheaf,
    data: pd.DataFrame,
    hardcode: bool = False,
    ties: bool = True,
    frozen: dict = None,
    initial: Assignment = None,
    options: SolveOptions = SolveOptions(),
) -> FitResult:
    """Fit a DSEM sheaf to a table of observations.

    Parameters
    ----------
    model : ModelSheaf
        The sheaf built by `build_model_sheaf`.
    data : pandas.DataFrame
        One row per time step and one column per variable, NaN for missing
        observations.
    hardcode : bool
        Freeze the numeric coefficients of the model instead of estimating
        them.
    ties : bool
        Keep the copies of every net equal to the net.
    frozen : dict, optional
        Further cells to hold at the given values, NaN marking coordinates
        that stay free.
    initial : Assignment, optional
        A starting point. If omitted the series are first fixed at the
        linearly interpolated data while the coefficients are solved for.
    options : SolveOptions
        Solver settings.

    Returns
    -------
    FitResult
        Estimated coefficients, completed series and the radius.
    """
    obs = _observations(model, data)
    fixed = _frozen_coefficients(model, hardcode, frozen)
    init = _initial_nets(model, data)
    frozen_cells = {c: True for c in obs}
    for cell, value in fixed.items():
        frozen_cells[cell] = ~np.isnan(value)
        init[cell] = np.where(np.isnan(value), init.get(cell, 0.0), value)
    if initial is None:
        stage = dict(frozen_cells)
        stage.update({c: True for c in model.series.values()})
        values = dict(obs)
        values.update({c: init[c] for c in stage if c not in obs})
        warm = minimize(SolveRequest(
            model.sheaf, Assignment(model.sheaf, values), None, stage,
            options._replace(strict=False), init))
        logger.info("Coefficients at interpolated data: radius {:.6g}.",
                    warm.radius)
        initial = warm.assignment
    values = dict(obs)
    values.update({c: init[c] for c in fixed})
    solve = minimize(SolveRequest(
        model.sheaf,
        Assignment(model.sheaf, values),
        None if ties else (),
        frozen_cells,
        # the warm start stands in for random restarts
        options._replace(restarts=0),
        initial,
    ))
    logger.info("Fitted {} observations, radius {:.6g}.", len(obs),
                solve.radius)
    return _fit_result(model, data, solve, set(fixed))


def _fit_result(model, data, solve, frozen):
    a = solve.assignment
    rows = []
    for e in model.spec.edges:
        if e.source == e.target:
            continue
        cell = model.coefficients.get(e)
        rows.append({
            "source": e.source,
            "target": e.target,
            "lag": e.lag,
            "sign": e.sign,
            "model": np.nan if is_free(e.coefficient) else e.coefficient,
            "estimate": float(a[cell][0]) if cell else float(e.coefficient),
            "fixed": cell is None or cell in frozen,
        })
    coefficients = pd.DataFrame(
        rows, columns=["source", "target", "lag", "sign", "model",
                       "estimate", "fixed"])
    ar_rows = []
    for v, cell in model.ar_coefficients.items():
        model_values = model.fixed.get(cell, np.full(model.ar_orders[v], np.nan))
        for i, est in enumerate(a[cell]):
            ar_rows.append({"variable": v, "lag": i + 1,
                            "model": model_values[i], "estimate": float(est),
                            "fixed": cell in frozen})
    ar = pd.DataFrame(
        ar_rows, columns=["variable", "lag", "model", "estimate", "fixed"])
    series = pd.DataFrame(
        {v: a[model.series[v]] for v in model.spec.variables},
        index=data.index)
    series.attrs["observed"] = data[list(model.spec.variables)].notna()
    return FitResult(solve, coefficients, ar, series, solve.radius)


def completed_series(result: FitResult) -> pd.DataFrame:
    """Long table of the completed series with an `observed` flag."""
    series = result.series
    long = series.reset_index().melt(
        id_vars=series.index.name or "index", var_name="variable")
    observed = series.attrs["observed"].reset_index().melt(
        id_vars=series.index.name or "index", var_name="variable",
        value_name="observed")
    long["observed"] = observed["observed"].to_numpy()
    return long.rename(columns={series.index.name or "index": "time"})


def _coefficient_values(model, fitted):
    values = {}
    cells = list(model.coefficients.values()) + list(
        model.ar_coefficients.values())
    for cell in cells:
        if fitted is not None:
            values[cell] = fitted.solve.assignment[cell]
        elif cell in model.fixed and not np.isnan(model.fixed[cell]).any():
            values[cell] = model.fixed[cell]
        else:
            raise FreeCoefficientPresent(
                "`%s` has no value; fit the model first." % cell)
    return values


def predict(
    model: ModelSheaf,
    data: pd.DataFrame,
    targets,
    fitted: FitResult = None,
    options: SolveOptions = SolveOptions(),
) -> FitResult:
    """Predict target observations from the rest of the data.

    `targets` is a list of variables, whose observations are all hidden,
    or a dict mapping variables to the time labels to hide. Coefficients
    are held at their fitted values (or at the model's numeric values).
    """
    hidden = data.astype(float)
    if not isinstance(targets, dict):
        targets = {v: list(data.index) for v in targets}
    for v, times in targets.items():
        if v not in hidden.columns:
            raise UnknownVariable("Unknown target variable `%s`." % v)
        hidden.loc[list(times), v] = np.nan
    logger.info("Predicting {} hidden observations.",
                int(hidden.isna().sum().sum() - data.isna().sum().sum()))
    return fit(model, hidden, frozen=_coefficient_values(model, fitted),
               options=options)


def impute(
    model: ModelSheaf,
    data: pd.DataFrame,
    fitted: FitResult = None,
    options: SolveOptions = SolveOptions(),
) -> FitResult:
    """Fill in missing observations with all coefficients frozen."""
    return fit(model, data, frozen=_coefficient_values(model, fitted),
               options=options)


def _pair_kind(sheaf, lower, upper):
    kinds = sheaf.provenance.get("pair_kinds", {})
    if (lower, upper) in kinds:
        return kinds[(lower, upper)]
    return "composite"


def residual_report(result, top: int = None, tol: float = 1e-12):
    """Rank the pairs contributing to the consistency radius.

    Accepts a `SolveResult` or `FitResult`. Every row names the pair, its
    kind ("copy", "prediction", "autoregression", "observation" or
    "composite" for non-covering pairs), the variable and time it refers to,
    its contribution to the p-th power of the radius and its share of the
    total.
    """
    solve = getattr(result, "solve", result)
    sheaf = solve.assignment.sheaf
    rows = []
    for r in solve.residuals:
        if r.contribution <= tol:
            continue
        up, lo = sheaf.info.get(r.upper, {}), sheaf.info.get(r.lower, {})
        rows.append({
            "lower": r.lower,
            "upper": r.upper,
            "kind": _pair_kind(sheaf, r.lower, r.upper),
            "variable": up.get("variable", lo.get("variable", up.get("name"))),
            "time": up.get("time"),
            "contribution": r.contribution,
        })
    report = pd.DataFrame(rows, columns=["lower", "upper", "kind", "variable",
                                         "time", "contribution"])
    total = sum(r.contribution for r in solve.residuals)
    report["share"] = report.contribution / total if total > 0 else 0.0
    report = report.sort_values("contribution", ascending=False,
                                kind="stable").reset_index(drop=True)
    return report.head(top) if top else report


def attribute_residuals(report: pd.DataFrame, threshold: float = 0.5):
    """Decide per variable whether residuals point at an outlier.

    Observation contributions are summed per observation. When a single
    observation carries at least `threshold` of its variable's total the
    verdict is "outlier", otherwise the contributions are spread over the
    series and the verdict is "model" (the dynamics, e.g. the AR order,
    do not fit).
    """
    obs = report[report.time.notna()]
    columns = ["variable", "observations", "total", "worst_time",
               "worst_share", "verdict"]
    if obs.empty:
        return pd.DataFrame(columns=columns)
    per_obs = obs.groupby(["variable", "time"]).contribution.sum()
    rows = []
    for v, group in per_obs.groupby(level="variable"):
        total = group.sum()
        worst = group.idxmax()[1]
        share = group.max() / total
        rows.append({
            "variable": v,
            "observations": len(group),
            "total": total,
            "worst_time": worst,
            "worst_share": share,
            "verdict": "outlier" if share >= threshold else "model",
        })
    return pd.DataFrame(rows, columns=columns).sort_values(
        "total", ascending=False).reset_index(drop=True)


def _variant_label(order):
    return "no_ar" if order == 0 else "ar%d" % order


def compare_ar_orders(
    spec,
    data: pd.DataFrame,
    orders=(0, 1, 2),
    hardcode_order: int = 1,
    options: SolveOptions = SolveOptions(),
) -> pd.DataFrame:
    """Fit the same data with several AR orders.

    The first column ("dsem") holds the model's own coefficients and the
    radius obtained when they are hard-coded into the sheaf with AR order
    `hardcode_order`; every further column holds the coefficients estimated
    with one AR order. The last row is the consistency radius.
    """
    columns = {}
    variants = [("dsem", hardcode_order, True)] + [
        (_variant_label(k), k, False) for k in orders]
    for name, order, hardcode in variants:
        model = build_model_sheaf(spec, len(data), ar=order,
                                  labels=list(data.index))
        result = fit(model, data, hardcode=hardcode, options=options)
        table = result.coefficients
        labels = table.source + "->" + table.target + "@" + \
            table.lag.astype(str)
        column = "model" if hardcode else "estimate"
        values = pd.Series(table[column].to_numpy(), index=labels)
        values["radius"] = result.radius
        columns[name] = values
        logger.info("Variant {}: radius {:.6g}.", name, result.radius)
    return pd.DataFrame(columns)
