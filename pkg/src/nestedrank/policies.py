"""Nested Elimination, Nested Partition and the ranking baselines.

All policies share one substrate: a global timer ``t``, a vector of voting
scores ``W`` (how often each item has been chosen) and an active display set.
Active items are ordered by descending score with ascending id as tie-break.

The classes follow the scikit-learn estimator conventions: constructor
arguments are hyper-parameters (``get_params``/``set_params`` work), and
``fit(model, rng)`` interacts with a preference model until the policy stops,
leaving results in trailing-underscore attributes.  The ``run_*`` functions
are the functional equivalents.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ConfigError, check_delta, check_int, check_policy_m, check_separation
from .choice_model import Ranking, sample_choice
from .rng import RandomStream

MAX_STEPS = 10**9
_CEIL_SLACK = 1e-9


class NonTerminationError(RuntimeError):
    pass


# --- thresholds ---------------------------------------------------------------


def beta(n_items):
    return 2 ** (n_items - 1) - 1


def _ceil_threshold(x):
    # formulas that land on an integer must not be bumped up by rounding noise
    return max(1, math.ceil(x - _CEIL_SLACK))


def m_for_select(delta, n_items, p):
    """Threshold that makes NE delta-PAC: ``(log 1/delta + log beta(K)) / log 1/p``."""
    delta = check_delta(delta)
    p = check_separation(p)
    n_items = check_int(n_items, "K", minimum=2)
    return _ceil_threshold((math.log(1 / delta) + math.log(beta(n_items))) / math.log(1 / p))


def m_for_rank(delta, n_items, p):
    """Threshold that makes NP delta-PAC: ``(log 1/delta + log(K-1)) / log 1/p``."""
    delta = check_delta(delta)
    p = check_separation(p)
    n_items = check_int(n_items, "K", minimum=2)
    return _ceil_threshold((math.log(1 / delta) + math.log(n_items - 1)) / math.log(1 / p))


SELECT_POLICIES = ("ne", "ne-one-by-one")
RANK_POLICIES = ("np", "ne-ranking", "repeated-ne")
POLICIES = SELECT_POLICIES + RANK_POLICIES


def m_for_policy(policy, delta, n_items, p):
    """The single place where a confidence level becomes a threshold."""
    if policy in SELECT_POLICIES:
        return m_for_select(delta, n_items, p)
    if policy in ("np", "ne-ranking"):
        return m_for_rank(delta, n_items, p)
    if policy == "repeated-ne":
        # per-call thresholds; this is the first (largest) one
        return m_for_select(delta / (n_items - 1), n_items, p)
    raise ConfigError(f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}")


def repeated_ne_thresholds(delta, n_items, p):
    """Per-call thresholds of Repeated-NE, call ``j`` running on ``K - j`` items."""
    delta = check_delta(delta)
    return [m_for_select(delta / (n_items - 1), n, p) for n in range(n_items, 1, -1)]


# --- criteria -----------------------------------------------------------------


def elimination_check(sorted_scores, M):
    """Smallest ``k`` with ``sum(top k) - k * score[k+1] >= M``, else ``None``."""
    top = 0
    for k in range(1, len(sorted_scores)):
        top += sorted_scores[k - 1]
        if top - k * sorted_scores[k] >= M:
            return k
    return None


def partition_check(sorted_scores, M):
    """Smallest ``k`` with ``score[k] - score[k+1] >= M``, else ``None``."""
    for k in range(1, len(sorted_scores)):
        if sorted_scores[k - 1] - sorted_scores[k] >= M:
            return k
    return None


def sort_by_votes(W, items):
    return sorted(items, key=lambda i: (-W[i], i))


# --- state and outcomes -------------------------------------------------------


@dataclass
class VotingState:
    W: list
    active: tuple
    t: int = 0

    @classmethod
    def start(cls, n_items, items=None):
        items = tuple(range(n_items)) if items is None else tuple(sorted(items))
        return cls([0] * n_items, items, 0)

    def ranked_active(self):
        return sort_by_votes(self.W, self.active)


@dataclass
class RunTrace:
    """Choice events and elimination/partition markers in time order."""

    events: list = field(default_factory=list)
    enabled: bool = True

    def choice(self, t, display, chosen):
        if self.enabled:
            self.events.append({"t": t, "display": list(display), "choice": chosen})

    def mark(self, t, event, **fields):
        if self.enabled:
            self.events.append({"t": t, "event": event, **fields})

    def choices(self):
        return [e for e in self.events if "choice" in e]

    def to_jsonl(self):
        return "".join(json.dumps(e) + "\n" for e in self.events)


@dataclass
class PartitionNode:
    items: tuple
    high: "PartitionNode" = None
    low: "PartitionNode" = None
    t_split: int = None

    def is_leaf(self):
        return self.high is None

    def leaves(self):
        if self.is_leaf():
            return [self.items[0]]
        return self.high.leaves() + self.low.leaves()

    def internal_nodes(self):
        if self.is_leaf():
            return []
        return [self] + self.high.internal_nodes() + self.low.internal_nodes()

    def to_dict(self):
        d = {"set": list(self.items)}
        if not self.is_leaf():
            d["t"] = self.t_split
            d["high"] = self.high.to_dict()
            d["low"] = self.low.to_dict()
        return d


@dataclass
class SelectOutcome:
    recommended: int
    tau: int
    trace: RunTrace
    eliminated: list = field(default_factory=list)
    state: VotingState = None


@dataclass
class RankOutcome:
    ranking: Ranking
    tau: int
    trace: RunTrace
    tree: PartitionNode = None
    state: VotingState = None


def _as_stream(rng):
    if rng is None:
        return RandomStream.for_trial(0)
    if isinstance(rng, (int, np.integer)):
        return RandomStream.for_trial(int(rng))
    return rng


# --- state machines -----------------------------------------------------------


def _step(model, state, rng, trace, max_steps):
    state.t += 1
    if state.t > max_steps:
        raise NonTerminationError(f"nontermination suspected after {max_steps} steps")
    x = sample_choice(model, state.active, rng)
    state.W[x] += 1
    trace.choice(state.t, state.active, x)
    return x


def _ne_loop(model, M, rng, state, trace, max_steps):
    eliminated = []
    while len(state.active) > 1:
        _step(model, state, rng, trace, max_steps)
        ranked = state.ranked_active()
        k = elimination_check([state.W[i] for i in ranked], M)
        if k is not None:
            gone = ranked[k:]
            eliminated.extend(reversed(gone))
            state.active = tuple(sorted(ranked[:k]))
            trace.mark(state.t, "eliminate", items=gone, active=list(state.active))
    return state.active[0], eliminated


def run_ne(model, M, rng=None, record_trace=True, max_steps=MAX_STEPS):
    """Nested Elimination: show the active set until one item survives.

    After every choice, the active set shrinks to the top ``k`` items for the
    smallest ``k`` meeting the elimination criterion, so several items may
    leave at once.
    """
    M = check_int(M, "M", minimum=1)
    rng = _as_stream(rng)
    state = VotingState.start(model.n_items)
    trace = RunTrace(enabled=record_trace)
    best, eliminated = _ne_loop(model, M, rng, state, trace, max_steps)
    return SelectOutcome(best, state.t, trace, eliminated, state)


def run_ne_one_by_one(model, M, rng=None, record_trace=True, max_steps=MAX_STEPS):
    """NE variant that drops only the lowest-voted item per check.

    Checks repeat without sampling until the criterion fails for the current
    bottom item.
    """
    M = check_int(M, "M", minimum=1)
    rng = _as_stream(rng)
    state = VotingState.start(model.n_items)
    trace = RunTrace(enabled=record_trace)
    eliminated = []
    while len(state.active) > 1:
        ranked = state.ranked_active()
        n = len(ranked)
        scores = [state.W[i] for i in ranked]
        if sum(scores[:-1]) - (n - 1) * scores[-1] >= M:
            eliminated.append(ranked[-1])
            state.active = tuple(sorted(ranked[:-1]))
            trace.mark(state.t, "eliminate", items=[ranked[-1]], active=list(state.active))
        else:
            _step(model, state, rng, trace, max_steps)
    return SelectOutcome(state.active[0], state.t, trace, eliminated, state)


def run_np(model, M, rng=None, record_trace=True, max_steps=MAX_STEPS):
    """Nested Partition: recursively split the active set on a score gap of ``M``.

    The recursion runs on an explicit stack, high part before low part, with
    one global timer and one global score vector.
    """
    M = check_int(M, "M", minimum=1)
    rng = _as_stream(rng)
    state = VotingState.start(model.n_items)
    trace = RunTrace(enabled=record_trace)
    root = PartitionNode(tuple(range(model.n_items)))
    stack = [root]
    order = []
    while stack:
        node = stack.pop()
        if len(node.items) == 1:
            order.append(node.items[0])
            continue
        state.active = node.items
        while True:
            _step(model, state, rng, trace, max_steps)
            ranked = state.ranked_active()
            k = partition_check([state.W[i] for i in ranked], M)
            if k is not None:
                break
        node.high = PartitionNode(tuple(sorted(ranked[:k])))
        node.low = PartitionNode(tuple(sorted(ranked[k:])))
        node.t_split = state.t
        trace.mark(state.t, "partition", set=list(node.items),
                   high=list(node.high.items), low=list(node.low.items))
        stack.append(node.low)
        stack.append(node.high)
    state.active = ()
    return RankOutcome(Ranking(tuple(order)), state.t, trace, root, state)


def run_ne_ranking(model, M, rng=None, record_trace=True, max_steps=MAX_STEPS):
    """NE-Ranking: peel off the leader once it beats the runner-up by ``M``."""
    M = check_int(M, "M", minimum=1)
    rng = _as_stream(rng)
    state = VotingState.start(model.n_items)
    trace = RunTrace(enabled=record_trace)
    order = []
    while len(state.active) > 1:
        _step(model, state, rng, trace, max_steps)
        ranked = state.ranked_active()
        leader, runner_up = ranked[0], ranked[1]
        if state.W[leader] - state.W[runner_up] >= M:
            order.append(leader)
            state.active = tuple(sorted(ranked[1:]))
            trace.mark(state.t, "rank", item=leader, rank=len(order))
    order.append(state.active[0])
    return RankOutcome(Ranking(tuple(order)), state.t, trace, None, state)


def run_repeated_ne(model, delta, p, rng=None, record_trace=True, max_steps=MAX_STEPS):
    """Rank by ``K - 1`` fresh NE runs at confidence ``delta / (K - 1)`` each.

    Every call starts from zero scores on the items not yet ranked; its
    threshold uses the current number of items.
    """
    rng = _as_stream(rng)
    K = model.n_items
    thresholds = repeated_ne_thresholds(delta, K, p)
    trace = RunTrace(enabled=record_trace)
    remaining = tuple(range(K))
    order = []
    t = 0
    for M in thresholds:
        state = VotingState([0] * K, remaining, t)
        best, _ = _ne_loop(model, M, rng, state, trace, max_steps)
        t = state.t
        order.append(best)
        trace.mark(t, "rank", item=best, rank=len(order))
        remaining = tuple(i for i in remaining if i != best)
    order.append(remaining[0])
    return RankOutcome(Ranking(tuple(order)), t, trace, None, None)


# --- likelihood diagnostics ---------------------------------------------------


def glr_margin_select(state, k, p):
    """Generalized log-likelihood ratio against "item ranked k+1 is the best".

    Equals ``log(1/p) * (sum of top-k scores - k * score[k+1])`` over the
    active items sorted by votes.
    """
    p = check_separation(p)
    scores = [state.W[i] for i in state.ranked_active()]
    if not 1 <= k < len(scores):
        raise ConfigError(f"k must be in [1, {len(scores) - 1}], got {k}")
    return math.log(1 / p) * (sum(scores[:k]) - k * scores[k])


def pairwise_wins(trace, n_items):
    """``w[i, j]``: steps where both ``i`` and ``j`` were shown and ``i`` was chosen."""
    w = np.zeros((n_items, n_items), dtype=np.int64)
    for e in trace.choices():
        x = e["choice"]
        for j in e["display"]:
            if j != x:
                w[x, j] += 1
    return w


def glr_margin_pairwise(wins, ranked, k, p):
    """The same margin computed from pairwise win counts."""
    pivot = ranked[k]
    net = sum(int(wins[i, pivot]) - int(wins[pivot, i]) for i in ranked[:k])
    return math.log(1 / p) * net


def mle_ranking(state):
    """Maximum-likelihood OA ranking under nested displays: sort by votes."""
    return Ranking(tuple(sort_by_votes(state.W, range(len(state.W)))))


# --- estimator wrappers -------------------------------------------------------


class _PolicyBase(BaseEstimator):
    _formula = None

    def _resolve_m(self, n_items):
        return check_policy_m(self.M, self.delta, self.p, type(self)._formula, n_items)

    def _outcome_attrs(self, out):
        self.outcome_ = out
        self.tau_ = out.tau
        self.trace_ = out.trace
        return self


class NestedElimination(_PolicyBase):
    """Best-item identification by nested elimination.

    Parameters
    ----------
    M : int, optional
        Elimination threshold.  Mutually exclusive with ``delta``.
    delta : float, optional
        Target error probability; needs ``p``.
    p : float, optional
        Separation parameter used to turn ``delta`` into ``M``.
    one_by_one : bool, default=False
        Use the variant that eliminates a single item per check.
    record_trace : bool, default=True
    """

    _formula = staticmethod(m_for_select)

    def __init__(self, M=None, delta=None, p=None, one_by_one=False, record_trace=True):
        self.M = M
        self.delta = delta
        self.p = p
        self.one_by_one = one_by_one
        self.record_trace = record_trace

    def fit(self, model, rng=None):
        M = self._resolve_m(model.n_items)
        run = run_ne_one_by_one if self.one_by_one else run_ne
        out = run(model, M, rng, record_trace=self.record_trace)
        self.M_ = M
        self.recommended_ = out.recommended
        self.eliminated_ = out.eliminated
        return self._outcome_attrs(out)

    def predict(self):
        return self.recommended_


class _RankPolicy(_PolicyBase):
    _formula = staticmethod(m_for_rank)
    _run = None

    def __init__(self, M=None, delta=None, p=None, record_trace=True):
        self.M = M
        self.delta = delta
        self.p = p
        self.record_trace = record_trace

    def fit(self, model, rng=None):
        M = self._resolve_m(model.n_items)
        out = type(self)._run(model, M, rng, record_trace=self.record_trace)
        self.M_ = M
        self.ranking_ = out.ranking
        self.tree_ = out.tree
        return self._outcome_attrs(out)

    def predict(self):
        return self.ranking_


class NestedPartition(_RankPolicy):
    """Full-ranking identification by recursive score-gap partitions."""

    _run = staticmethod(run_np)


class NestedEliminationRanking(_RankPolicy):
    """Full ranking by peeling off a dominant leader repeatedly."""

    _run = staticmethod(run_ne_ranking)


class RepeatedNestedElimination(BaseEstimator):
    """Full ranking by ``K - 1`` independent NE runs at level ``delta / (K - 1)``."""

    def __init__(self, delta=0.05, p=0.9, record_trace=True):
        self.delta = delta
        self.p = p
        self.record_trace = record_trace

    def fit(self, model, rng=None):
        out = run_repeated_ne(model, self.delta, self.p, rng, record_trace=self.record_trace)
        self.thresholds_ = repeated_ne_thresholds(self.delta, model.n_items, self.p)
        self.outcome_ = out
        self.ranking_ = out.ranking
        self.tau_ = out.tau
        self.trace_ = out.trace
        return self

    def predict(self):
        return self.ranking_
