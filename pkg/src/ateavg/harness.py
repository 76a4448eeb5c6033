"""Monte Carlo driver, summary metrics and multi-dataset analyses.

Replications are independent: replication ``r`` of scenario ``sid`` under
master seed ``m`` draws its data from the substream ``(sid, m, r)`` and seeds
its estimators from a value derived from the same triple. Workers therefore
never share random state, and results are sorted by replication before
aggregation, so outputs do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .averaging import average_available, trimmed_average, wald_interval
from .estimators import EstimatorSettings, Method, estimate_many
from .rng import derive_seed
from .simulation import ScenarioId, generate_scenario, true_ate

AVERAGED = "averaged"
TRIMMED = "trimmed"
ENSEMBLES = (AVERAGED, TRIMMED)
NOMINAL = 0.95

REJECT = "reject"
RETAIN = "fail_to_reject"
FAILED = "failed"


@dataclass(frozen=True)
class ResultRow:
    replication: int
    estimator: str
    theta: float = math.nan
    sigma: float = math.nan
    lo: float = math.nan
    hi: float = math.nan
    covers: bool = False
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class RawTable:
    scenario: ScenarioId
    master_seed: int
    true_ate: float
    estimators: tuple
    rows: tuple

    @property
    def replications(self):
        return len({r.replication for r in self.rows})

    def key(self):
        """Comparable content; NaN entries compare equal via their repr."""
        return [tuple(repr(v) for v in vars(r).values()) for r in self.rows]

    def column(self, estimator, attr):
        return np.array([getattr(r, attr) for r in self.rows if r.estimator == estimator])


def evaluate_dataset(d, methods, s: EstimatorSettings, level=NOMINAL):
    """Run the methods and both ensembles on one dataset.

    Returns a list of ``(label, theta, sigma, (lo, hi), error)`` tuples with
    one entry per method followed by the averaged and trimmed estimates.
    """
    methods = [Method(m) for m in methods]
    outputs, failures = estimate_many(d, methods, s)
    by_method = {o.method: o for o in outputs}
    out = []
    for m in methods:
        if m in by_method:
            o = by_method[m]
            out.append((m.value, o.theta_hat, o.sigma_hat, wald_interval(o.theta_hat, o.sigma_hat, level), ""))
        else:
            out.append((m.value, math.nan, math.nan, (math.nan, math.nan), failures[m]))
    failed = tuple(failures)
    for label, fn in ((AVERAGED, average_available), (TRIMMED, trimmed_average)):
        try:
            agg = fn(outputs, failed, level=level) if label == AVERAGED else fn(outputs, level=level, excluded=failed)
            out.append((label, agg.theta_A, agg.sigma_A, agg.interval, ""))
        except ValueError as exc:
            out.append((label, math.nan, math.nan, (math.nan, math.nan), str(exc)))
    return out


def replication_settings(s: EstimatorSettings, sid, master_seed, r):
    return s.replace(seed=derive_seed(s.seed, "replication", ScenarioId(sid).value, master_seed, r))


def _one_replication(args):
    sid, r, s, methods, master_seed, level = args
    draw = generate_scenario(sid, master_seed, r)
    truth = draw.true_ate
    rows = []
    for label, theta, sigma, (lo, hi), err in evaluate_dataset(
        draw.dataset, methods, replication_settings(s, sid, master_seed, r), level
    ):
        failed = bool(err)
        covers = bool((not failed) and lo <= truth <= hi)
        rows.append(ResultRow(r, label, float(theta), float(sigma), float(lo), float(hi), covers, failed, err))
    return rows


def run_monte_carlo(sid, R, s: EstimatorSettings | None = None, methods=None, master_seed=0, threads=1, level=NOMINAL):
    """Run ``R`` replications; ``threads`` only sets the worker-process count."""
    sid = ScenarioId(sid)
    if R < 1:
        raise ValueError("need at least one replication")
    methods = list(Method) if methods is None else [Method(m) for m in methods]
    if not methods:
        raise ValueError("need at least one method")
    s = s or EstimatorSettings()
    jobs = [(sid, r, s, methods, master_seed, level) for r in range(R)]
    if threads <= 1 or R == 1:
        chunks = [_one_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, R)) as pool:
            chunks = list(pool.map(_one_replication, jobs))
    rows = sorted((row for chunk in chunks for row in chunk), key=lambda x: x.replication)
    labels = tuple(m.value for m in methods) + ENSEMBLES
    return RawTable(sid, master_seed, true_ate(sid), labels, tuple(rows))


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    kind: str
    successes: int
    failures: int
    bias: float
    variance: float
    mse: float
    normalized_mse: float
    coverage: float


@dataclass(frozen=True)
class MonteCarloReport:
    scenario: ScenarioId
    replications: int
    master_seed: int
    true_ate: float
    rows: tuple
    rankings: dict = field(default_factory=dict)

    def row(self, estimator):
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    def method_rows(self):
        return [r for r in self.rows if r.kind == "method"]

    HEADER = ("scenario", "master_seed", "replications", "role", "estimator", "successes", "failures",
              "bias", "variance", "mse", "normalized_mse", "coverage")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for role, r in [(r.kind if r.kind == "method" else r.estimator, r) for r in self.rows] + [
                (role, self.row(name)) for role, name in self.rankings.items()
            ]:
                w.writerow([self.scenario.value, self.master_seed, self.replications, role, r.estimator, r.successes,
                            r.failures] + [_fmt(v) for v in (r.bias, r.variance, r.mse, r.normalized_mse, r.coverage)])


def _fmt(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def _lower_median(labels, values):
    order = sorted(range(len(values)), key=lambda i: (values[i], labels[i]))
    return labels[order[(len(order) - 1) // 2]]


def summarize(raw: RawTable, truth=None) -> MonteCarloReport:
    """Bias, variance, MSE, normalized MSE and coverage per estimator.

    Variance uses the ``R - 1`` denominator and MSE is the mean squared
    deviation from the truth, so ``MSE = bias^2 + variance * (R - 1) / R``.
    Normalized MSE divides by the smallest method MSE. Ensembles are reported
    but excluded from the best/median/worst rankings.
    """
    truth = raw.true_ate if truth is None else truth
    if raw.replications < 2:
        raise ValueError("need at least two replications to summarize")
    stats = []
    for label in raw.estimators:
        failed = raw.column(label, "failed")
        theta = raw.column(label, "theta")[~failed]
        covers = raw.column(label, "covers")[~failed]
        k = len(theta)
        if k >= 2:
            bias = float(theta.mean() - truth)
            var = float(theta.var(ddof=1))
            mse = float(np.mean((theta - truth) ** 2))
            cov = float(covers.mean())
        else:
            bias = var = mse = cov = math.nan
        stats.append((label, "method" if label not in ENSEMBLES else "ensemble", k, int(failed.sum()), bias, var, mse, cov))
    method_mse = [st[6] for st in stats if st[1] == "method" and np.isfinite(st[6])]
    anchor = min(method_mse) if method_mse else math.nan
    rows = tuple(
        SummaryRow(lab, kind, k, nf, b, v, mse, mse / anchor if anchor > 0 else math.nan, cov)
        for lab, kind, k, nf, b, v, mse, cov in stats
    )
    return MonteCarloReport(raw.scenario, raw.replications, raw.master_seed, truth, rows, _rankings(rows))


def _rankings(rows):
    meth = [r for r in rows if r.kind == "method" and np.isfinite(r.mse)]
    if not meth:
        return {}
    labels = [r.estimator for r in meth]
    mse = [r.mse for r in meth]
    cov = [r.coverage for r in meth]
    # best coverage: closest to nominal among methods that do not cover every time
    pool = [i for i, c in enumerate(cov) if c < 1] or list(range(len(cov)))
    best_cov = min(pool, key=lambda i: (abs(cov[i] - NOMINAL), labels[i]))
    worst_cov = min(range(len(cov)), key=lambda i: (cov[i], labels[i]))
    return {
        "best_mse": labels[min(range(len(mse)), key=lambda i: (mse[i], labels[i]))],
        "median_mse": _lower_median(labels, mse),
        "worst_mse": labels[min(range(len(mse)), key=lambda i: (-mse[i], labels[i]))],
        "best_coverage": labels[best_cov],
        "median_coverage": _lower_median(labels, cov),
        "worst_coverage": labels[worst_cov],
    }


@dataclass(frozen=True)
class AgreementMatrix:
    rows: tuple
    columns: tuple
    cells: np.ndarray  # object array of REJECT / RETAIN / FAILED
    disagreement: np.ndarray  # per column: at least two distinct non-failed decisions

    def filtered(self):
        keep = np.flatnonzero(self.disagreement)
        return AgreementMatrix(self.rows, tuple(self.columns[j] for j in keep), self.cells[:, keep],
                               self.disagreement[keep])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("estimator",) + self.columns)
            for i, name in enumerate(self.rows):
                w.writerow((name,) + tuple(self.cells[i]))
            w.writerow(("any_disagreement",) + tuple(str(bool(x)).lower() for x in self.disagreement))


@dataclass(frozen=True)
class EstimatesTable:
    """Point estimates, standard errors and intervals for many datasets."""

    rows: tuple
    columns: tuple
    theta: np.ndarray
    sigma: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    p_over_n: np.ndarray


def analyze_datasets(datasets, s: EstimatorSettings | None = None, methods=None, names=None, threads=1,
                     level=NOMINAL) -> EstimatesTable:
    s = s or EstimatorSettings()
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one dataset")
    methods = list(Method) if methods is None else [Method(m) for m in methods]
    names = tuple(names) if names is not None else tuple(f"dataset{j + 1}" for j in range(len(datasets)))
    jobs = [(d, methods, s, level) for d in datasets]
    if threads <= 1 or len(jobs) == 1:
        results = [_evaluate_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_evaluate_job, jobs))
    rows = tuple(r[0] for r in results[0])
    shape = (len(rows), len(datasets))
    theta, sigma, lo, hi = (np.full(shape, np.nan) for _ in range(4))
    for j, res in enumerate(results):
        for i, (_, t, sg, (a, b), _err) in enumerate(res):
            theta[i, j], sigma[i, j], lo[i, j], hi[i, j] = t, sg, a, b
    pn = np.array([d.p / d.n for d in datasets])
    return EstimatesTable(rows, names, theta, sigma, lo, hi, pn)


def _evaluate_job(args):
    d, methods, s, level = args
    return evaluate_dataset(d, methods, s, level)


def agreement_from_table(table: EstimatesTable) -> AgreementMatrix:
    failed = ~np.isfinite(table.theta)
    reject = (table.lo > 0) | (table.hi < 0)
    cells = np.where(failed, FAILED, np.where(reject, REJECT, RETAIN)).astype(object)
    disagreement = np.array([len({c for c in cells[:, j] if c != FAILED}) >= 2 for j in range(cells.shape[1])],
                            dtype=bool)
    return AgreementMatrix(table.rows, table.columns, cells, disagreement)


def decision_agreement(datasets, s: EstimatorSettings | None = None, names=None, threads=1) -> AgreementMatrix:
    """Reject / fail-to-reject decisions for H0: ATE = 0, every estimator by every dataset."""
    return agreement_from_table(analyze_datasets(datasets, s, names=names, threads=threads))


@dataclass(frozen=True)
class CorrelationReport:
    methods: tuple
    matrix: np.ndarray
    datasets: tuple
    pn_threshold: float | None = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("method",) + self.methods)
            for i, m in enumerate(self.methods):
                w.writerow((m,) + tuple(_fmt(v) for v in self.matrix[i]))


def pearson_matrix(values):
    """Pearson correlations between the rows of ``values``."""
    v = np.asarray(values, dtype=float)
    c = v - v.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(c**2, axis=1))
    if np.any(norms == 0):
        raise ValueError("an estimator is constant across datasets; correlation undefined")
    R = (c @ c.T) / np.outer(norms, norms)
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R


def estimator_correlations(table: EstimatesTable, pn_threshold=None, methods=None):
    """Correlation of point estimates across datasets for the candidate methods.

    With ``pn_threshold`` only datasets with ``p / n`` above it are used.
    Datasets where any of the methods failed are skipped.
    """
    methods = tuple(m.value for m in Method) if methods is None else tuple(Method(m).value for m in methods)
    idx = [table.rows.index(m) for m in methods if m in table.rows]
    theta = table.theta[idx]
    keep = np.all(np.isfinite(theta), axis=0)
    if pn_threshold is not None:
        keep &= table.p_over_n > pn_threshold
    if keep.sum() < 3:
        raise ValueError(f"need at least 3 usable datasets for correlations, have {int(keep.sum())}")
    cols = tuple(c for c, k in zip(table.columns, keep) if k)
    return CorrelationReport(tuple(table.rows[i] for i in idx), pearson_matrix(theta[:, keep]), cols, pn_threshold)


def write_estimates_csv(table: EstimatesTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset", "p_over_n", "estimator", "theta", "sigma", "lo", "hi"))
        for j, col in enumerate(table.columns):
            for i, row in enumerate(table.rows):
                w.writerow((col, _fmt(table.p_over_n[j]), row) + tuple(
                    _fmt(a[i, j]) for a in (table.theta, table.sigma, table.lo, table.hi)))
