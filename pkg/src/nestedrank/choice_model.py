"""Preference instances, choice sampling and MNL calibration.

Items are labelled ``0 .. K-1``.  A display set is a strictly increasing tuple
of item ids with at least two members.  Rankings are :class:`Ranking` objects
that store the items from best to worst.
"""

import itertools
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ConfigError, check_display_set, check_int, check_separation

ROW_TOL = 1e-12
WEIGHT_FLOOR = 1e-9


class SeparabilityError(ValueError):
    """The instance is not consistent with a strict ranking."""


@dataclass(frozen=True)
class Ranking:
    """A strict ranking; ``order[k]`` is the item in position ``k`` (0 = best)."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"not a permutation of 0..{len(order) - 1}: {order}")
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, n_items):
        return cls(tuple(range(n_items)))

    @classmethod
    def from_sigma(cls, sigma):
        """Build from positions, ``sigma[i]`` being the 0-based rank of item ``i``."""
        order = [None] * len(sigma)
        for item, pos in enumerate(sigma):
            if not 0 <= pos < len(sigma) or order[pos] is not None:
                raise ValueError(f"not a bijection: {list(sigma)}")
            order[pos] = item
        return cls(tuple(order))

    @property
    def sigma(self):
        pos = [0] * len(self.order)
        for k, item in enumerate(self.order):
            pos[item] = k
        return tuple(pos)

    @property
    def n_items(self):
        return len(self.order)

    def best(self):
        return self.order[0]

    def local_rank(self, item, S):
        """0-based rank of ``item`` among the members of ``S``."""
        sigma = self.sigma
        return sum(1 for j in S if sigma[j] < sigma[item])

    def __len__(self):
        return len(self.order)


@dataclass(frozen=True)
class ChoiceRecord:
    display: tuple
    chosen: int

    def __post_init__(self):
        display = check_display_set(self.display)
        object.__setattr__(self, "display", display)
        if int(self.chosen) not in display:
            raise ValueError(f"chosen item {self.chosen} not in display {display}")
        object.__setattr__(self, "chosen", int(self.chosen))


class PreferenceModel:
    """Choice probabilities ``f(i|S)`` over a universe of ``n_items`` items.

    Subclasses implement :meth:`probs` and :meth:`ranking`.  The ground-truth
    ranking is for evaluation only; policies never read it.
    """

    n_items: int

    @property
    def K(self):
        return self.n_items

    def probs(self, S):
        """Choice probabilities for the members of ``S`` in ascending id order."""
        raise NotImplementedError

    def prob(self, i, S):
        S = check_display_set(S, self.n_items)
        if i not in S:
            return 0.0
        return self.probs(S)[S.index(i)]

    def ranking(self):
        raise NotImplementedError

    def display_sets(self, min_size=2):
        for size in range(min_size, self.n_items + 1):
            yield from itertools.combinations(range(self.n_items), size)

    def to_dict(self):
        raise NotImplementedError


class OAPreference(PreferenceModel):
    """Ordinal Attraction: ``f(i|S) = (1-p) p**r / (1 - p**|S|)``.

    ``r`` is the 0-based local rank of ``i`` inside ``S``.

    Parameters
    ----------
    p : float
        Dispersion in ``(0, 1)``.
    n_items : int, optional
        Universe size; the ranking defaults to the identity.
    sigma : sequence of int, optional
        0-based positions, ``sigma[i]`` being the rank of item ``i``.
    """

    def __init__(self, p, n_items=None, sigma=None):
        self.p = check_separation(p)
        if sigma is None:
            if n_items is None:
                raise ConfigError("OAPreference needs n_items or sigma")
            self._ranking = Ranking.identity(check_int(n_items, "K", minimum=2))
        else:
            self._ranking = Ranking.from_sigma(list(sigma))
            if n_items is not None and n_items != len(self._ranking):
                raise ConfigError("n_items does not match sigma")
        self.n_items = len(self._ranking)
        if self.n_items < 2:
            raise ConfigError("K must be >= 2")
        self._sigma = self._ranking.sigma

    def probs(self, S):
        p = self.p
        n = len(S)
        scale = (1.0 - p) / (1.0 - p ** n)
        pos = [self._sigma[i] for i in S]
        ranks = [sum(1 for q in pos if q < own) for own in pos]
        return tuple(scale * p ** r for r in ranks)

    def ranking(self):
        return self._ranking

    def to_dict(self):
        return {"kind": "oa", "p": self.p, "sigma": list(self._sigma)}

    def __repr__(self):
        return f"OAPreference(p={self.p}, sigma={list(self._sigma)})"


class MNLPreference(PreferenceModel):
    """Multinomial logit: ``f(i|S) = nu_i / sum_{j in S} nu_j``."""

    def __init__(self, weights, metadata=None):
        w = [float(x) for x in weights]
        if len(w) < 2:
            raise ConfigError("MNL needs at least two weights")
        if any(not (x > 0.0) or math.isinf(x) for x in w):
            raise ConfigError(f"MNL weights must be positive and finite: {w}")
        self.weights = tuple(w)
        self.n_items = len(w)
        self.metadata = dict(metadata or {})

    def probs(self, S):
        w = self.weights
        total = 0.0
        for i in S:
            total += w[i]
        return tuple(w[i] / total for i in S)

    def ranking(self):
        order = sorted(range(self.n_items), key=lambda i: (-self.weights[i], i))
        return Ranking(tuple(order))

    def to_dict(self):
        d = {"kind": "mnl", "weights": list(self.weights)}
        if self.metadata:
            d["metadata"] = self.metadata
        return d

    def __repr__(self):
        return f"MNLPreference(weights={list(self.weights)})"


class TabularPreference(PreferenceModel):
    """Explicit choice probabilities, one row per display set.

    The table must cover every display set of size at least two.  If no
    ranking is given it is read off the full-set row.
    """

    def __init__(self, n_items, table, sigma=None):
        self.n_items = check_int(n_items, "K", minimum=2, maximum=20)
        rows = {}
        for S, row in dict(table).items():
            S = check_display_set(S, self.n_items)
            row = tuple(float(x) for x in row)
            if len(row) != len(S):
                raise ConfigError(f"row for {list(S)} has {len(row)} entries")
            if any(not (x > 0.0) for x in row):
                raise ConfigError(f"row for {list(S)} must be strictly positive")
            if abs(math.fsum(row) - 1.0) > ROW_TOL:
                raise ConfigError(f"row for {list(S)} sums to {math.fsum(row)!r}")
            rows[S] = row
        missing = [S for S in self.display_sets() if S not in rows]
        if missing:
            raise ConfigError(f"table misses {len(missing)} display sets, e.g. {list(missing[0])}")
        self.table = rows
        if sigma is None:
            full = rows[tuple(range(self.n_items))]
            order = sorted(range(self.n_items), key=lambda i: (-full[i], i))
            self._ranking = Ranking(tuple(order))
        else:
            self._ranking = Ranking.from_sigma(list(sigma))

    def probs(self, S):
        return self.table[tuple(S)]

    def ranking(self):
        return self._ranking

    def to_dict(self):
        return {
            "kind": "tabular",
            "K": self.n_items,
            "sigma": list(self._ranking.sigma),
            "rows": [{"set": list(S), "probs": list(row)} for S, row in self.table.items()],
        }


class RelabeledPreference(PreferenceModel):
    """View of ``base`` with items renamed so the true ranking is the identity.

    New label ``j`` stands for ``base`` item ``order[j]``.
    """

    def __init__(self, base, order=None):
        self.base = base
        self.order = tuple(base.ranking().order if order is None else order)
        self.n_items = base.n_items

    def probs(self, S):
        orig = [self.order[j] for j in S]
        S_orig = tuple(sorted(orig))
        row = self.base.probs(S_orig)
        lookup = dict(zip(S_orig, row))
        return tuple(lookup[i] for i in orig)

    def ranking(self):
        return Ranking.identity(self.n_items)

    def to_dict(self):
        return to_tabular(self).to_dict()


def relabel_to_identity(model):
    if isinstance(model, OAPreference):
        return OAPreference(model.p, n_items=model.n_items)
    if isinstance(model, MNLPreference):
        order = model.ranking().order
        return MNLPreference([model.weights[i] for i in order])
    return RelabeledPreference(model)


def to_tabular(model):
    """Enumerate every display set of ``model`` into a :class:`TabularPreference`."""
    table = {S: model.probs(S) for S in model.display_sets()}
    return TabularPreference(model.n_items, table, sigma=model.ranking().sigma)


def min_separation(model):
    """Smallest ``p`` such that ``model`` is p-separable under its ranking.

    OA and MNL use their closed forms; other models are enumerated over every
    display set, which costs ``2**K`` rows.
    """
    if isinstance(model, OAPreference):
        return model.p
    if isinstance(model, MNLPreference):
        w = sorted(model.weights, reverse=True)
        worst = max(w[i + 1] / w[i] for i in range(len(w) - 1))
        if worst >= 1.0:
            raise SeparabilityError("not separable under claimed ranking: tied MNL weights")
        return worst
    sigma = model.ranking().sigma
    worst = 0.0
    for S in model.display_sets():
        row = model.probs(S)
        by_rank = sorted(zip((sigma[i] for i in S), row))
        for a in range(len(by_rank)):
            for b in range(a + 1, len(by_rank)):
                ratio = by_rank[b][1] / by_rank[a][1]
                if ratio >= 1.0:
                    raise SeparabilityError(
                        f"not separable under claimed ranking: set {list(S)}"
                    )
                worst = max(worst, ratio)
    return worst


def sample_choice(model, S, rng):
    """Draw one choice from ``S`` with a single uniform (inverse CDF, ascending ids)."""
    row = model.probs(S)
    u = rng.uniform()
    cum = 0.0
    for item, q in zip(S, row):
        cum += q
        if u < cum:
            return item
    return S[-1]


# --- serialization -----------------------------------------------------------


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "oa":
        return OAPreference(d["p"], n_items=d.get("K"), sigma=d.get("sigma"))
    if kind == "mnl":
        return MNLPreference(d["weights"], metadata=d.get("metadata"))
    if kind == "tabular":
        table = {tuple(r["set"]): r["probs"] for r in d["rows"]}
        return TabularPreference(d["K"], table, sigma=d.get("sigma"))
    raise ConfigError(f"unknown model kind {kind!r}")


def dumps_model(model):
    return json.dumps(model.to_dict())


def loads_model(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model JSON is malformed: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("model JSON must be an object")
    try:
        return model_from_dict(d)
    except KeyError as exc:
        raise ConfigError(f"model JSON misses field {exc}") from None


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


# --- ranking data and MNL calibration -----------------------------------------


class RankingParseError(ValueError):
    pass


_LINE = re.compile(r"^\s*(\d+)\s*:\s*(.*?)\s*$")


def parse_rankings(lines, n_items=None):
    """Parse ``<count>: <id>,<id>,...`` lines into (count, ranking) pairs."""
    groups = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE.match(line)
        if m is None:
            raise RankingParseError(f"line {lineno}: expected '<count>: <id>,<id>,...'")
        count = int(m.group(1))
        try:
            items = [int(tok) for tok in m.group(2).split(",")]
        except ValueError:
            raise RankingParseError(f"line {lineno}: item ids must be integers") from None
        if count < 1:
            raise RankingParseError(f"line {lineno}: count must be positive")
        if len(set(items)) != len(items):
            raise RankingParseError(f"line {lineno}: duplicate item in ranking")
        if any(i < 0 for i in items):
            raise RankingParseError(f"line {lineno}: negative item id")
        groups.append((lineno, count, items))
    if not groups:
        raise RankingParseError("no records")
    K = n_items if n_items is not None else max(len(items) for _, _, items in groups)
    for lineno, _, items in groups:
        bad = [i for i in items if i >= K]
        if bad:
            raise RankingParseError(f"line {lineno}: unknown item id {bad[0]} (K={K})")
    return K, [(count, items) for _, count, items in groups]


def load_rankings(path, n_items=None):
    """Read a ranking file; each voter's top item becomes a choice from the full set."""
    with open(path, encoding="utf-8") as fh:
        K, groups = parse_rankings(fh, n_items)
    full = tuple(range(K))
    if K < 2:
        raise RankingParseError("need at least two items")
    records = []
    for count, items in groups:
        rec = ChoiceRecord(full, items[0])
        records.extend([rec] * count)
    return records


class MNLChoiceEstimator(BaseEstimator):
    """Maximum-likelihood MNL weights by minorization-maximization.

    Each iteration applies ``nu_i <- w_i / sum_r [i in S_r] / nu(S_r)`` where
    ``w_i`` is the number of times ``i`` was chosen, then rescales so the
    weights sum to ``K``.

    Parameters
    ----------
    tol : float, default=1e-10
        Stop when the largest relative weight change falls below ``tol``.
    max_iter : int, default=10000
    floor : float, default=1e-9
        Weights of items that are never chosen are clamped here and reported
        in ``degenerate_items_``.
    """

    def __init__(self, tol=1e-10, max_iter=10000, floor=WEIGHT_FLOOR):
        self.tol = tol
        self.max_iter = max_iter
        self.floor = floor

    def fit(self, records, n_items=None):
        records = list(records)
        if not records:
            raise ConfigError("no records")
        K = n_items if n_items is not None else 1 + max(max(r.display) for r in records)
        displays = {}
        for rec in records:
            entry = displays.setdefault(rec.display, np.zeros(K))
            entry[rec.chosen] += 1.0
        incidence = np.zeros((len(displays), K))
        counts = np.zeros((len(displays), K))
        for row, (S, c) in enumerate(displays.items()):
            incidence[row, list(S)] = 1.0
            counts[row] = c
        shown = incidence.sum(axis=0)
        if np.any(shown == 0):
            missing = np.flatnonzero(shown == 0).tolist()
            raise ConfigError(f"items never displayed: {missing}")
        n_shown = counts.sum(axis=1)
        wins = counts.sum(axis=0)

        nu = np.ones(K)
        history = [self._loglik(nu, incidence, counts, n_shown)]
        converged = False
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            denom = incidence.T @ (n_shown / (incidence @ nu))
            new = wins / denom
            new *= K / new.sum()
            change = np.max(np.abs(new - nu) / np.maximum(new, self.floor))
            nu = new
            history.append(self._loglik(nu, incidence, counts, n_shown))
            if change < self.tol:
                converged = True
                break
        degenerate = np.flatnonzero(nu < self.floor).tolist()
        nu = np.maximum(nu, self.floor)

        self.n_items_ = K
        self.weights_ = nu
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.log_likelihood_ = history
        self.degenerate_items_ = degenerate
        return self

    @staticmethod
    def _loglik(nu, incidence, counts, n_shown):
        with np.errstate(divide="ignore"):
            log_nu = np.where(counts.sum(axis=0) > 0, np.log(nu), 0.0)
        return float((counts @ log_nu).sum() - n_shown @ np.log(incidence @ nu))

    def predict_proba(self, S):
        S = check_display_set(S, self.n_items_)
        w = self.weights_[list(S)]
        return w / w.sum()

    def score(self, records):
        """Mean log-likelihood per record."""
        total = 0.0
        n = 0
        for rec in records:
            total += math.log(self.predict_proba(rec.display)[rec.display.index(rec.chosen)])
            n += 1
        return total / n

    def to_preference(self):
        meta = {"n_iter": self.n_iter_, "converged": self.converged_}
        if self.degenerate_items_:
            meta["degenerate_items"] = self.degenerate_items_
        return MNLPreference(self.weights_.tolist(), metadata=meta)


def fit_mnl(records, tol=1e-10, max_iter=10000, n_items=None):
    return MNLChoiceEstimator(tol=tol, max_iter=max_iter).fit(records, n_items).to_preference()
