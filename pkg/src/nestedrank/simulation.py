"""Monte-Carlo experiments over a grid of confidence levels.

Trial ``i`` at grid index ``d`` draws from the stream keyed by
``trial_key(base_seed, d, i)`` (see :mod:`nestedrank.rng`), so every number
here is reproducible and independent of how many threads run the trials.
"""

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._kernels import MAX_TABLE_ITEMS, run_batch
from ._validation import ConfigError, check_delta, check_int, check_separation
from .choice_model import min_separation
from .policies import (
    POLICIES,
    RANK_POLICIES,
    m_for_policy,
    repeated_ne_thresholds,
    run_ne,
    run_ne_one_by_one,
    run_ne_ranking,
    run_np,
    run_repeated_ne,
)
from .rng import RandomStream

DEFAULT_DELTAS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
DEFAULT_TRIALS = 512
CSV_FIELDS = ("delta", "log_inv_delta", "M", "trials", "mean_tau", "stderr_tau", "errors",
              "error_rate")


@dataclass
class ExperimentSpec:
    """One policy on one model over a descending grid of ``delta`` values.

    ``m_values`` replaces the grid by explicit thresholds (``delta`` is then
    reported as NaN).  ``p`` defaults to the model's minimum separation.
    """

    model: object
    policy: str
    deltas: tuple = DEFAULT_DELTAS
    p: float = None
    trials: int = DEFAULT_TRIALS
    base_seed: int = 0
    m_values: tuple = None

    def validate(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {', '.join(POLICIES)}")
        if self.model.n_items < 2:
            raise ConfigError("policies need at least two items")
        check_int(self.trials, "trials", minimum=1)
        check_int(self.base_seed, "seed", minimum=0, maximum=2**64 - 1)
        if self.m_values is not None:
            if self.policy == "repeated-ne":
                raise ConfigError("repeated-ne derives its thresholds from delta; give delta")
            for M in self.m_values:
                check_int(M, "M", minimum=1)
            return
        if not self.deltas:
            raise ConfigError("empty delta grid")
        for d in self.deltas:
            check_delta(d)
        if list(self.deltas) != sorted(self.deltas, reverse=True) or len(set(self.deltas)) != len(self.deltas):
            raise ConfigError("delta grid must be strictly descending")
        if self.p is not None:
            check_separation(self.p)

    def separation(self):
        return min_separation(self.model) if self.p is None else self.p

    def grid(self):
        """``(delta, M, thresholds)`` per grid point."""
        if self.m_values is not None:
            return [(math.nan, int(M), None) for M in self.m_values]
        p = self.separation()
        K = self.model.n_items
        out = []
        for d in self.deltas:
            th = repeated_ne_thresholds(d, K, p) if self.policy == "repeated-ne" else None
            out.append((d, m_for_policy(self.policy, d, K, p), th))
        return out


@dataclass
class DeltaStats:
    delta: float
    log_inv_delta: float
    M: int
    trials: int
    mean_tau: float
    stderr_tau: float
    errors: int
    error_rate: float
    taus: np.ndarray = field(default=None, repr=False, compare=False)
    wrong: np.ndarray = field(default=None, repr=False, compare=False)

    def row(self):
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class AggregateStats:
    policy: str
    rows: list
    slope: float = math.nan
    slope_stderr: float = math.nan
    intercept: float = math.nan
    wall_seconds: float = field(default=0.0, compare=False)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps(finite_json({
            "policy": self.policy,
            "rows": [r.row() for r in self.rows],
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "wall_seconds": self.wall_seconds,
        }), indent=2)


def finite_json(obj):
    """Replace NaN and infinities by ``None`` so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_json(v) for v in obj]
    return obj


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


_PY_RUNNERS = {
    "ne": run_ne,
    "ne-one-by-one": run_ne_one_by_one,
    "np": run_np,
    "ne-ranking": run_ne_ranking,
}


def _python_batch(model, policy, M, thresholds, p, delta, base_seed, didx, trials):
    K = model.n_items
    taus = np.zeros(trials, np.int64)
    outs = np.full((trials, K), -1, np.int64)
    for i in range(trials):
        rng = RandomStream.for_trial(base_seed, didx, i)
        if policy == "repeated-ne":
            out = run_repeated_ne(model, delta, p, rng, record_trace=False)
        else:
            out = _PY_RUNNERS[policy](model, M, rng, record_trace=False)
        taus[i] = out.tau
        if policy in RANK_POLICIES:
            outs[i] = out.ranking.order
        else:
            outs[i, 0] = out.recommended
    return taus, outs


def run_trials(model, policy, M, base_seed, delta_index, trials, thresholds=None, p=None,
               delta=None):
    """Raw ``(taus, wrong)`` arrays for one grid point."""
    if model.n_items <= MAX_TABLE_ITEMS:
        taus, outs = run_batch(model, policy, M, base_seed, delta_index, trials, thresholds)
    else:
        taus, outs = _python_batch(model, policy, M, thresholds, p, delta, base_seed,
                                   delta_index, trials)
    if (taus < 0).any():
        raise RuntimeError("nontermination suspected: a trial exceeded the step cap")
    truth = np.asarray(model.ranking().order)
    if policy in RANK_POLICIES:
        wrong = (outs != truth).any(axis=1)
    else:
        wrong = outs[:, 0] != truth[0]
    return taus, wrong


def summarize(delta, M, taus, wrong):
    n = len(taus)
    x = taus.astype(np.float64)
    mean = float(np.sum(x) / n)
    sd = float(np.sqrt(np.sum((x - mean) ** 2) / (n - 1))) if n > 1 else math.nan
    errors = int(wrong.sum())
    lid = math.log(1 / delta) if not math.isnan(delta) else math.nan
    return DeltaStats(delta, lid, M, n, mean, sd / math.sqrt(n), errors, errors / n, taus, wrong)


def ols_slope(x, y):
    """Least-squares slope, its standard error and the intercept."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) < 2:
        return math.nan, math.nan, math.nan
    fit = stats.linregress(x, y)
    se = float(fit.stderr) if len(x) > 2 else math.nan
    return float(fit.slope), se, float(fit.intercept)


def run_experiment(spec):
    spec.validate()
    start = time.perf_counter()
    p = None if spec.m_values is not None else spec.separation()
    rows = []
    for didx, (delta, M, th) in enumerate(spec.grid()):
        taus, wrong = run_trials(spec.model, spec.policy, M, spec.base_seed, didx, spec.trials,
                                 thresholds=th, p=p, delta=delta)
        rows.append(summarize(delta, M, taus, wrong))
    if spec.m_values is None:
        slope, se, icpt = ols_slope([r.log_inv_delta for r in rows], [r.mean_tau for r in rows])
    else:
        slope, se, icpt = ols_slope([r.M for r in rows], [r.mean_tau for r in rows])
    return AggregateStats(spec.policy, rows, slope, se, icpt, time.perf_counter() - start)


@dataclass
class PairedRow:
    delta: float
    mean_diff: float
    stderr_diff: float

    @property
    def z(self):
        if self.stderr_diff == 0:
            return 0.0 if self.mean_diff == 0 else math.copysign(math.inf, self.mean_diff)
        return self.mean_diff / self.stderr_diff


def paired_compare(spec_a, spec_b):
    """Per-grid-point mean of ``tau_A - tau_B`` over trials sharing streams."""
    if spec_a.model.to_dict() != spec_b.model.to_dict():
        raise ConfigError("paired comparison needs the same model")
    if tuple(spec_a.deltas) != tuple(spec_b.deltas) or spec_a.m_values != spec_b.m_values:
        raise ConfigError("paired comparison needs the same delta grid")
    if spec_a.base_seed != spec_b.base_seed or spec_a.trials != spec_b.trials:
        raise ConfigError("paired comparison needs the same seed and trial count")
    a = run_experiment(spec_a)
    b = run_experiment(spec_b)
    out = []
    for ra, rb in zip(a.rows, b.rows):
        d = ra.taus.astype(np.float64) - rb.taus.astype(np.float64)
        n = len(d)
        mean = float(np.sum(d) / n)
        se = float(np.sqrt(np.sum((d - mean) ** 2) / (n - 1) / n)) if n > 1 else math.nan
        out.append(PairedRow(ra.delta, mean, se))
    return out, a, b

