"""Discretize, simulate and fit dynamic structural equation models."""

from loguru import logger
import networkx as nx
import numpy as np
import pandas as pd
import scipy.linalg as sl
from scipy.optimize import least_squares
from dsem_sheaf._formats_and_types import (
    FREE,
    SIGNS,
    TRANSFORMS,
    DsemSheafError,
    DsemSpec,
    Edge,
    FreeCoefficientPresent,
    GmrfModel,
    LagNotDeclared,
    MissingData,
    MLFit,
    NonConvergence,
    NotPositiveDefinite,
    PathMatrix,
    SingularLink,
    UnknownVariable,
    DimensionMismatch,
)


def is_free(coefficient) -> bool:
    """Check whether a coefficient has to be estimated."""
    return isinstance(coefficient, str) and coefficient == FREE


def self_edges(spec: DsemSpec, variable: str) -> list:
    """Get the AR edges of a variable sorted by lag."""
    return sorted(
        (e for e in spec.edges if e.source == variable and e.target == variable),
        key=lambda e: e.lag,
    )


def cross_edges(spec: DsemSpec, target: str = None) -> list:
    """Get the edges between distinct variables, optionally into `target`."""
    return [
        e
        for e in spec.edges
        if e.source != e.target and (target is None or e.target == target)
    ]


def _default_ar_order(variable, edges):
    lags = [e.lag for e in edges if e.source == variable == e.target]
    return max(lags) if lags else 1


def dsem_spec(
    variables,
    edges,
    lags=None,
    ar_orders: dict = None,
    h: float = 1.0,
    transforms: dict = None,
    options: dict = None,
) -> DsemSpec:
    """Create and validate a DSEM specification.

    Parameters
    ----------
    variables : list of str
        The variable names.
    edges : list of Edge or tuple
        The directed edges `(source, target, lag, coefficient, sign)`.
        A coefficient of "free" marks it for estimation. Edges from a
        variable to itself are its autoregressive terms and replace the
        default random-walk persistence.
    lags : list of int, optional
        The declared lags. Defaults to 0 plus every lag used by an edge.
    ar_orders : dict, optional
        The AR order used for each variable in sheaf models. Defaults to
        the largest self-edge lag or 1.
    h : float
        The Euler step.

    Returns
    -------
    DsemSpec
        The validated specification.
    """
    variables = tuple(variables)
    edges = tuple(e if isinstance(e, Edge) else Edge(*e) for e in edges)
    if lags is None:
        lags = sorted({0} | {int(e.lag) for e in edges})
    orders = {v: _default_ar_order(v, edges) for v in variables}
    orders.update(ar_orders or {})
    trans = {v: "none" for v in variables}
    trans.update(transforms or {})
    spec = DsemSpec(
        variables=variables,
        lags=tuple(lags),
        edges=edges,
        ar_orders=orders,
        h=float(h),
        transforms=trans,
        options=dict(options or {}),
    )
    validate_spec(spec)
    return spec


def validate_spec(spec: DsemSpec) -> None:
    """Raise if the specification violates any of its invariants."""
    if len(set(spec.variables)) != len(spec.variables):
        raise DsemSheafError("Variable names must be unique :(")
    if not spec.h > 0:
        raise DsemSheafError("The step `h` must be positive.")
    lags = list(spec.lags)
    if lags != sorted(set(lags)) or lags[0] != 0:
        raise DsemSheafError(
            "`lags` must be strictly increasing and start at 0, got %s." % lags
        )
    seen = set()
    for e in spec.edges:
        for v in (e.source, e.target):
            if v not in spec.variables:
                raise UnknownVariable("Edge endpoint `%s` is not declared." % v)
        if e.lag < 0:
            raise DsemSheafError(
                "Edge `%s -> %s` has a negative lag." % (e.source, e.target))
        if e.lag not in lags:
            raise LagNotDeclared(
                "Lag %d of edge `%s -> %s` is not declared."
                % (e.lag, e.source, e.target)
            )
        if e.source == e.target and e.lag == 0:
            raise DsemSheafError(
                "Self-edge on `%s` needs a positive lag." % e.source)
        numeric = isinstance(e.coefficient, (int, float, np.number))
        if not is_free(e.coefficient) and not (
            numeric and np.isfinite(e.coefficient)
        ):
            raise DsemSheafError(
                "Coefficient of `%s -> %s` is neither a number nor `free`."
                % (e.source, e.target)
            )
        if e.sign not in SIGNS:
            raise DsemSheafError("Unknown sign `%s`." % e.sign)
        key = (e.source, e.target, e.lag)
        if key in seen:
            raise DsemSheafError("Duplicate edge `%s -> %s` at lag %d." % key)
        seen.add(key)
    for v, k in spec.ar_orders.items():
        if v not in spec.variables:
            raise UnknownVariable("AR order given for unknown `%s`." % v)
        if k < 0:
            raise DsemSheafError("AR order of `%s` must be >= 0." % v)
    for v, t in spec.transforms.items():
        if t not in TRANSFORMS:
            raise DsemSheafError("Unknown transform `%s` for `%s`." % (t, v))
    instant = nx.DiGraph()
    instant.add_edges_from(
        (e.source, e.target) for e in spec.edges if e.lag == 0)
    if not nx.is_directed_acyclic_graph(instant):
        raise DsemSheafError("The lag-0 edges must not contain a cycle.")


def _require_numeric(spec):
    free = [e for e in spec.edges if is_free(e.coefficient)]
    if free:
        raise FreeCoefficientPresent(
            "Numeric coefficients are required but %d are `free` (first: "
            "`%s -> %s`)." % (len(free), free[0].source, free[0].target)
        )


def persistence(spec: DsemSpec, variable: str, order: int = None) -> np.ndarray:
    """Own-lag coefficients of a variable, padded to `order`.

    Variables without self-edges persist by the backward Euler shift which
    is the random walk (1, 0, ..., 0).
    """
    own = self_edges(spec, variable)
    if order is None:
        order = max([e.lag for e in own] + [1])
    coefs = np.zeros(order)
    if not own:
        if order > 0:
            coefs[0] = 1.0
        return coefs
    for e in own:
        if e.lag > order:
            raise DsemSheafError(
                "AR order %d of `%s` is smaller than its self-edge lag %d."
                % (order, variable, e.lag)
            )
        if is_free(e.coefficient):
            raise FreeCoefficientPresent(
                "Self-edge of `%s` at lag %d is `free`." % (variable, e.lag))
        coefs[e.lag - 1] = spec.h * e.coefficient
    return coefs


def build_path_matrix(spec: DsemSpec) -> PathMatrix:
    """Assemble the path matrix P of the Euler-discretized DSEM."""
    validate_spec(spec)
    _require_numeric(spec)
    index = [(v, lag) for lag in spec.lags for v in spec.variables]
    position = {key: i for i, key in enumerate(index)}
    P = np.zeros((len(index), len(index)))
    has_ar = {v: bool(self_edges(spec, v)) for v in spec.variables}
    for v in spec.variables:
        if has_ar[v]:
            continue
        for lag in spec.lags:
            shifted = lag + spec.h
            if float(shifted).is_integer() and (v, int(shifted)) in position:
                P[position[(v, lag)], position[(v, int(shifted))]] += 1.0
    for e in spec.edges:
        for lag in spec.lags:
            col = (e.source, lag + e.lag)
            if col in position:
                P[position[(e.target, lag)], position[col]] += (
                    spec.h * e.coefficient)
    return PathMatrix(index=index, matrix=P)


def extract_coefficients(pm: PathMatrix, spec: DsemSpec) -> list:
    """Read the edge coefficients back out of a path matrix."""
    position = {key: i for i, key in enumerate(pm.index)}
    coefs = []
    for e in spec.edges:
        for lag in spec.lags:
            col = (e.source, lag + e.lag)
            if col in position:
                value = pm.matrix[position[(e.target, lag)], position[col]]
                coefs.append(value / spec.h)
                break
        else:
            raise LagNotDeclared(
                "Edge `%s -> %s` has no entry in the path matrix."
                % (e.source, e.target)
            )
    return coefs


def simulate(
    spec: DsemSpec,
    steps: int,
    noise_sd: float = 0.0,
    seed: int = 0,
    init=None,
) -> pd.DataFrame:
    """Simulate the discretized DSEM.

    Iterates x_k(t) = x_k(t-1) + h * sum(gamma * x_i(t - lag)) + h * eps
    for t >= 1 starting from `init` at t = 0. Variables with self-edges
    replace the x_k(t-1) term by their AR terms. Values before t = 0 are 0.
    """
    _require_numeric(spec)
    max_lag = max(spec.lags)
    if steps <= max_lag:
        raise DsemSheafError(
            "`steps` must be larger than the maximum lag %d." % max_lag)
    if noise_sd < 0:
        raise DsemSheafError("`noise_sd` must be non-negative.")
    J = len(spec.variables)
    col = {v: i for i, v in enumerate(spec.variables)}
    if init is None:
        init = np.zeros(J)
    elif isinstance(init, dict):
        init = np.array([init.get(v, 0.0) for v in spec.variables], float)
    init = np.asarray(init, dtype=float)
    if init.shape != (J,):
        raise DimensionMismatch("`init` needs one value per variable.")

    instant = nx.DiGraph()
    instant.add_nodes_from(spec.variables)
    instant.add_edges_from(
        (e.source, e.target) for e in spec.edges if e.lag == 0)
    order = [col[v] for v in nx.lexicographical_topological_sort(instant)]
    inbound = {col[v]: [] for v in spec.variables}
    for e in spec.edges:
        inbound[col[e.target]].append((col[e.source], e.lag, e.coefficient))
    walks = [not self_edges(spec, v) for v in spec.variables]

    rng = np.random.default_rng(seed)
    noise = rng.normal(scale=noise_sd, size=(steps, J))
    x = np.zeros((steps, J))
    x[0] = init
    for t in range(1, steps):
        for k in order:
            value = x[t - 1, k] if walks[k] else 0.0
            for i, lag, gamma in inbound[k]:
                if t - lag >= 0:
                    value += spec.h * gamma * x[t - lag, i]
            x[t, k] = value + spec.h * noise[t, k]
    table = pd.DataFrame(x, columns=list(spec.variables))
    table.index.name = "time"
    return table


def assemble_precision(pm: PathMatrix, link) -> GmrfModel:
    """Assemble the GMRF precision Q = (I - P^T) V^-1 (I - P)."""
    G = np.asarray(link, dtype=float).ravel()
    if np.any(G == 0):
        raise SingularLink("The link matrix `G` has a zero diagonal entry.")
    M = pm.matrix.shape[0]
    if M % len(G) != 0:
        raise DimensionMismatch(
            "Path matrix of size %d does not fit %d link entries." % (M, len(G))
        )
    V = np.kron(np.eye(M // len(G)), np.diag(G ** 2))
    A = np.eye(M) - pm.matrix
    Q = A.T @ (A / np.diag(V)[:, None])
    Q = 0.5 * (Q + Q.T)
    return GmrfModel(precision=Q, variance=V, link=np.diag(G))


def log_density(model: GmrfModel, x) -> float:
    """Evaluate log N(x; 0, Q^-1)."""
    Q = model.precision
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != Q.shape[0]:
        raise DimensionMismatch(
            "`x` has length %d but the model has %d entries."
            % (x.shape[0], Q.shape[0])
        )
    try:
        L = sl.cholesky(Q, lower=True)
    except sl.LinAlgError:
        raise NotPositiveDefinite("The precision matrix is not positive definite.")
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(
        0.5 * logdet - 0.5 * len(x) * np.log(2 * np.pi) - 0.5 * x @ Q @ x)


def fit_dsem_ml(spec: DsemSpec, data: pd.DataFrame, link=None) -> MLFit:
    """Estimate the free coefficients by maximum likelihood.

    The innovations of the Euler update are Gaussian with standard
    deviation `link` (default 1 for every variable), so the likelihood is
    maximized by the least squares solution over the innovations.
    """
    validate_spec(spec)
    missing = [v for v in spec.variables if v not in data.columns]
    if missing:
        raise MissingData("No data for `%s`." % ", ".join(missing))
    x = data[list(spec.variables)].to_numpy(dtype=float)
    if np.isnan(x).any():
        raise MissingData("Maximum likelihood fitting needs complete data.")
    start = max(max(spec.lags), 1)
    if x.shape[0] < max(spec.lags) + 2:
        raise MissingData(
            "Need at least %d time points." % (max(spec.lags) + 2))
    free = [e for e in spec.edges if is_free(e.coefficient)]
    if not free:
        raise DsemSheafError("There are no `free` coefficients to fit.")
    G = np.ones(len(spec.variables)) if link is None else np.asarray(link)
    col = {v: i for i, v in enumerate(spec.variables)}
    times = np.arange(start, x.shape[0])

    known = np.zeros((len(times), len(spec.variables)))
    for v in spec.variables:
        k = col[v]
        if not self_edges(spec, v):
            known[:, k] += x[times - 1, k]
    for e in spec.edges:
        if not is_free(e.coefficient):
            known[:, col[e.target]] += spec.h * e.coefficient * _lagged(
                x[:, col[e.source]], times, e.lag)
    target = (x[times] - known) / spec.h / G
    design = np.zeros((len(times), len(spec.variables), len(free)))
    for j, e in enumerate(free):
        k = col[e.target]
        design[:, k, j] = _lagged(x[:, col[e.source]], times, e.lag) / G[k]
    target = target.ravel()
    design = design.reshape(-1, len(free))
    if np.linalg.matrix_rank(design) < len(free):
        raise NonConvergence(
            "The data do not identify all free coefficients (degenerate "
            "design, e.g. constant series)."
        )

    res = least_squares(
        lambda theta: design @ theta - target,
        np.zeros(len(free)),
        jac=lambda theta: design,
        method="trf",
        gtol=1e-12,
        xtol=1e-12,
        ftol=1e-12,
    )
    if res.status <= 0:
        raise NonConvergence(
            "Maximum likelihood fit did not converge after %d evaluations: %s"
            % (res.nfev, res.message),
            result=res,
        )
    eps = (design @ res.x - target).reshape(len(times), -1)
    ll = float(
        (-0.5 * np.log(2 * np.pi) - np.log(np.abs(G)) - 0.5 * eps ** 2).sum())
    logger.info(
        "Fitted {} free coefficients, log-likelihood {:.4g}.", len(free), ll)
    coefficients = pd.DataFrame(
        {
            "source": [e.source for e in free],
            "target": [e.target for e in free],
            "lag": [e.lag for e in free],
            "sign": [e.sign for e in free],
            "estimate": res.x,
        }
    )
    sigma = pd.Series(
        eps.std(axis=0) * np.abs(G), index=list(spec.variables), name="sigma")
    flat = sigma.index[(sigma <= 1e-12 * np.abs(G)).to_numpy()].tolist()
    if flat:
        logger.warning(
            "Zero innovation variance for {}; the fit is degenerate and its "
            "log-likelihood is not comparable.", ", ".join(flat))
    return MLFit(
        coefficients=coefficients,
        sigma=sigma,
        log_likelihood=ll,
        iterations=res.nfev,
    )


def _lagged(series, times, lag):
    idx = times - lag
    out = np.zeros(len(times))
    ok = idx >= 0
    out[ok] = series[idx[ok]]
    return out
