"""Exact error probabilities and expected stopping times on small instances.

Between two eliminations (or partitions, or rankings) a policy shows a fixed
set ``S`` and its scores move as a random walk on the score differences.  A
stage is identified by ``S``; its states are the score vectors on ``S``
shifted so the leader sits at zero, each state being the moment just before a
sample.  One sample either keeps the walk inside the stage or fires the
policy's rule, which hands the restricted scores to one or two child stages.

States are enumerated forward from the start by breadth-first search, stage
by stage in order of decreasing set size.  Expected remaining time and the
probability of finishing correctly then follow from one sparse linear solve
per stage, in order of increasing set size.  A forward solve per stage gives
the visit counts behind ``stage_breakdown``.

NE-Ranking leaves the scores of trailing items unbounded; there the distance
below the leader is clamped at ``M + ceil(log(tol) / log(p))``, which changes
results by roughly ``tol``.
"""

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csc_matrix, identity
from scipy.sparse.linalg import splu

from ._validation import ConfigError, check_int
from .choice_model import ChoiceRecord, OAPreference, Ranking, min_separation
from .policies import RunTrace, elimination_check, partition_check, sort_by_votes

ORACLE_POLICIES = ("ne", "np", "ne-ranking")
CLAMP_TOL = 1e-12


class OracleTooLargeError(RuntimeError):
    pass


@dataclass
class ExactResult:
    error_prob: float
    expected_tau: float
    stage_breakdown: list = field(default_factory=list)
    n_states: int = 0
    absorption_residual: float = 0.0

    def to_dict(self):
        return {
            "error_prob": self.error_prob,
            "expected_tau": self.expected_tau,
            "n_states": self.n_states,
            "absorption_residual": self.absorption_residual,
            "stage_breakdown": self.stage_breakdown,
        }


def exact_k2(model, M):
    """Gambler's ruin between barriers ``+M`` and ``-M`` on ``W(best) - W(other)``."""
    if model.n_items != 2:
        raise ConfigError(f"exact_k2 needs K=2, got K={model.n_items}")
    M = check_int(M, "M", minimum=1)
    best, other = model.ranking().order
    q = model.probs((0, 1))
    a, b = q[best], q[other]
    if not a > b:
        raise ConfigError("exact_k2 needs f(best) > f(other)")
    rho_m = (b / a) ** M
    error = rho_m / (1 + rho_m)
    tau = M / (a - b) * (1 - rho_m) / (1 + rho_m)
    breakdown = [{"set": [0, 1], "reach_prob": 1.0, "expected_steps": tau, "exit_mass": 1.0}]
    return ExactResult(error, tau, breakdown, 2 * M - 1, 0.0)


# --- stage rules --------------------------------------------------------------


def _restrict(S, W, subset):
    vals = [W[S.index(i)] for i in subset]
    top = max(vals)
    return tuple(v - top for v in vals)


def _rule_ne(S, W, M, best_of):
    scores = dict(zip(S, W))
    ranked = sort_by_votes(scores, S)
    k = elimination_check([scores[i] for i in ranked], M)
    if k is None:
        return None
    kept = tuple(sorted(ranked[:k]))
    correct = best_of(S) in kept
    return correct, [(kept, _restrict(S, W, kept))]


def _rule_np(S, W, M, best_of):
    scores = dict(zip(S, W))
    ranked = sort_by_votes(scores, S)
    k = partition_check([scores[i] for i in ranked], M)
    if k is None:
        return None
    high = tuple(sorted(ranked[:k]))
    low = tuple(sorted(ranked[k:]))
    correct = set(high) == set(_top(S, k, best_of))
    return correct, [(high, _restrict(S, W, high)), (low, _restrict(S, W, low))]


def _rule_ne_ranking(S, W, M, best_of):
    scores = dict(zip(S, W))
    ranked = sort_by_votes(scores, S)
    if scores[ranked[0]] - scores[ranked[1]] < M:
        return None
    rest = tuple(i for i in S if i != ranked[0])
    return ranked[0] == best_of(S), [(rest, _restrict(S, W, rest))]


_RULES = {"ne": _rule_ne, "np": _rule_np, "ne-ranking": _rule_ne_ranking}


def _top(S, k, best_of):
    remaining = list(S)
    out = []
    for _ in range(k):
        b = best_of(tuple(remaining))
        out.append(b)
        remaining.remove(b)
    return out


# --- chain construction -------------------------------------------------------


class _Stage:
    def __init__(self, S):
        self.S = S
        self.index = {}
        self.keys = []
        self.stay = []     # (row, col, prob)
        self.exits = []    # (row, prob, correct, children)
        self.entry = {}    # key -> probability mass arriving from parents

    def add(self, key):
        j = self.index.get(key)
        if j is None:
            j = len(self.keys)
            self.index[key] = j
            self.keys.append(key)
        return j


def _build(model, policy, M, clamp, max_states):
    K = model.n_items
    rank_pos = model.ranking().sigma

    def best_of(S):
        return min(S, key=lambda i: rank_pos[i])

    rule = _RULES[policy]
    full = tuple(range(K))
    stages = {full: _Stage(full)}
    stages[full].entry[(0,) * K] = 1.0
    total = 0
    for size in range(K, 1, -1):
        for S in sorted(s for s in stages if len(s) == size):
            stage = stages[S]
            q = model.probs(S)
            queue = deque()
            for key in stage.entry:
                if key not in stage.index:
                    stage.add(key)
                    queue.append(key)
            while queue:
                key = queue.popleft()
                row = stage.index[key]
                for a, qa in enumerate(q):
                    W = list(key)
                    W[a] += 1
                    top = max(W)
                    W = [max(v - top, -clamp) if clamp else v - top for v in W]
                    fired = rule(S, W, M, best_of)
                    if fired is None:
                        nxt = tuple(W)
                        if nxt not in stage.index:
                            stage.add(nxt)
                            queue.append(nxt)
                        stage.stay.append((row, stage.index[nxt], qa))
                    else:
                        correct, children = fired
                        stage.exits.append((row, qa, correct, children))
                        for child, ckey in children:
                            if len(child) > 1:
                                stages.setdefault(child, _Stage(child))
                                stages[child].entry.setdefault(ckey, 0.0)
                if len(stage.keys) + total > max_states:
                    raise OracleTooLargeError(
                        f"instance too large for exact oracle (more than {max_states} states)"
                    )
            total += len(stage.keys)
    return stages, total


def _system(stage):
    n = len(stage.keys)
    if stage.stay:
        r, c, v = zip(*stage.stay)
        P = csc_matrix((v, (r, c)), shape=(n, n))
    else:
        P = csc_matrix((n, n))
    # I - P is a diagonally dominant M-matrix, so skipping pivoting is safe
    # and lets the symmetric ordering cut the fill-in roughly in half
    return splu(csc_matrix(identity(n) - P), permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0, options={"SymmetricMode": True})


def exact_chain(model, policy, M, max_k=4, max_m=15, max_states=200_000):
    """Exact ``P(error)`` and ``E[tau]`` of NE, NP or NE-Ranking with threshold ``M``.

    States are enumerated as described in the module docstring; instances
    beyond ``max_k`` items, ``max_m`` or ``max_states`` states are refused.
    """
    if policy not in ORACLE_POLICIES:
        raise ConfigError(f"oracle supports {', '.join(ORACLE_POLICIES)}, got {policy!r}")
    M = check_int(M, "M", minimum=1)
    K = model.n_items
    if K > max_k or M > max_m:
        raise OracleTooLargeError(
            f"instance too large for exact oracle (K={K}, M={M}; limits K<={max_k}, M<={max_m})"
        )
    clamp = 0
    if policy == "ne-ranking" and K > 2:
        p = min_separation(model)
        clamp = M + math.ceil(math.log(CLAMP_TOL) / math.log(p))
    stages, n_states = _build(model, policy, M, clamp, max_states)

    # backward: children are always smaller, so solve by increasing size
    value, correct = {}, {}
    lus = {}
    for S in sorted(stages, key=len):
        stage = stages[S]
        n = len(stage.keys)
        bV = np.ones(n)
        bC = np.zeros(n)
        for row, qa, ok, children in stage.exits:
            v, c = 0.0, 1.0 if ok else 0.0
            for child, ckey in children:
                if len(child) > 1:
                    j = stages[child].index[ckey]
                    v += value[child][j]
                    c *= correct[child][j]
            bV[row] += qa * v
            bC[row] += qa * c
        lu = _system(stage)
        lus[S] = lu
        value[S] = lu.solve(bV)
        correct[S] = lu.solve(bC)

    # forward: visit counts, stage by stage from the root down
    breakdown = []
    residual = 0.0
    for S in sorted(stages, key=lambda s: (-len(s), s)):
        stage = stages[S]
        n = len(stage.keys)
        e = np.zeros(n)
        for key, mass in stage.entry.items():
            e[stage.index[key]] += mass
        visits = lus[S].solve(e, trans="T")
        exit_mass = 0.0
        for row, qa, ok, children in stage.exits:
            m = visits[row] * qa
            exit_mass += m
            for child, ckey in children:
                if len(child) > 1:
                    stages[child].entry[ckey] += m
        reach = float(e.sum())
        residual = max(residual, abs(exit_mass - reach))
        if reach > 0:
            breakdown.append({
                "set": list(S),
                "reach_prob": reach,
                "expected_steps": float(visits.sum()),
                "exit_mass": exit_mass,
                "n_states": n,
            })
    full = tuple(range(K))
    root = stages[full].index[(0,) * K]
    err = float(min(1.0, max(0.0, 1.0 - correct[full][root])))
    return ExactResult(err, float(value[full][root]), breakdown, n_states, residual)


# --- likelihood oracle --------------------------------------------------------


def _as_records(trace):
    if isinstance(trace, RunTrace):
        return [ChoiceRecord(tuple(e["display"]), e["choice"]) for e in trace.choices()]
    return list(trace)


def oa_log_likelihood(records, ranking, p):
    """Log-likelihood of choice records under the OA model with ``ranking``."""
    model = OAPreference(p, n_items=ranking.n_items, sigma=ranking.sigma)
    return sum(math.log(model.prob(r.chosen, r.display)) for r in records)


def mle_rank_bruteforce(trace, p, n_items):
    """OA maximum-likelihood ranking by enumerating all ``K!`` orders.

    The likelihood decreases with the summed local rank of the chosen items,
    so that integer is compared exactly; ties go to the lexicographically
    smallest order.
    """
    n_items = check_int(n_items, "K", minimum=1, maximum=8)
    records = _as_records(trace)
    best, best_score = None, None
    for order in itertools.permutations(range(n_items)):
        pos = [0] * n_items
        for k, item in enumerate(order):
            pos[item] = k
        score = sum(sum(1 for j in r.display if pos[j] < pos[r.chosen]) for r in records)
        if best_score is None or score < best_score:
            best, best_score = order, score
    return Ranking(best)
