"""Hardness quantities, worst-case constants and lower-bound checks.

Everything here works on the instance relabelled so that item ``j`` is the
``j``-th best (0-based).  Formulas below count ranks from 1, so item ``j``
has rank ``j + 1`` and the prefix set ``[r]`` is ``(0, ..., r-1)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_delta, check_int, check_separation
from .choice_model import SeparabilityError, min_separation, relabel_to_identity

TIE_TOL = 1e-12


class DegenerateInstanceError(ValueError):
    pass


def _prefix_probs(model, n):
    return model.probs(tuple(range(n)))


# --- best-item hardness -------------------------------------------------------


@dataclass
class SelectHardness:
    D: np.ndarray
    deltas: dict
    i_n: float
    p: float


def select_hardness(model, p=None):
    """Expected-duration coefficients ``D(f, r)`` and the NE hardness ``I^N(f)``.

    ``D(f, 1) = 1 / (1 - K f(K|[K]))`` and for ``r >= 2`` with ``m = K - r + 1``

        D(f, r) = m * sum_{i<r} Delta(i) D(f, i) / (1 - m f(m|[m])),
        Delta(i) = f(m|[K-i+1]) - f(m+1|[K-i+1]).

    ``I^N(f) = log(1/p) / sum_r D(f, r)``; ``p`` defaults to the instance's
    minimum separation.
    """
    f = relabel_to_identity(model)
    K = f.n_items
    p = min_separation(model) if p is None else check_separation(p)
    prefix = {n: _prefix_probs(f, n) for n in range(2, K + 1)}
    D = np.zeros(K - 1)
    deltas = {}
    for r in range(1, K):
        m = K - r + 1
        denom = 1.0 - m * prefix[m][m - 1]
        if denom <= 0:
            raise SeparabilityError(
                f"instance violates p-separability: 1 - {m} f({m}|[{m}]) = {denom:.3g}"
            )
        if r == 1:
            D[0] = 1.0 / denom
            continue
        acc = 0.0
        for i in range(1, r):
            row = prefix[K - i + 1]
            delta = row[m - 1] - row[m]
            deltas[(r, i)] = delta
            acc += delta * D[i - 1]
        D[r - 1] = m * acc / denom
    return SelectHardness(D, deltas, math.log(1 / p) / D.sum(), p)


def _odd_power_sum(j, p):
    # 1 + 2p + ... + (j-1) p**(j-2)
    return sum(k * p ** (k - 1) for k in range(1, j))


def i_star_oa(K, p):
    """Worst-case best-item information rate at the OA instance."""
    K = check_int(K, "K", minimum=2)
    p = check_separation(p)
    total = 1.0 + sum(p ** (j - 1) / _odd_power_sum(j, p) for j in range(2, K + 1))
    return (1 - p) * math.log(1 / p) / total


def i_star_oa_alt(K, p):
    """The same constant from its summed-over-ranks form."""
    K = check_int(K, "K", minimum=2)
    p = check_separation(p)
    total = (1 + p) / (1 - p)
    for r in range(1, K - 1):
        n = K - r
        total += (1 - p) * p**n / (n * p ** (n + 1) - (n + 1) * p**n + 1)
    return math.log(1 / p) / total


# --- ranking hardness ---------------------------------------------------------


@dataclass
class DgbtNode:
    """Node of the deterministic partition tree under fractional feedback."""

    items: tuple
    w: np.ndarray
    tau_bar: float = 0.0
    i_star: int = None
    high: "DgbtNode" = None
    low: "DgbtNode" = None
    probs: tuple = None

    def is_leaf(self):
        return self.high is None

    def internal_nodes(self):
        if self.is_leaf():
            return []
        return [self] + self.high.internal_nodes() + self.low.internal_nodes()

    def to_dict(self):
        d = {"set": list(self.items), "w": [float(x) for x in self.w]}
        if not self.is_leaf():
            d["tau_bar"] = self.tau_bar
            d["i_star"] = self.i_star
            d["high"] = self.high.to_dict()
            d["low"] = self.low.to_dict()
        return d


@dataclass
class RankHardness:
    root: DgbtNode
    j_n: float
    p: float

    def total_tau_bar(self):
        return sum(node.tau_bar for node in self.root.internal_nodes())


def _split(f, items, w, tie):
    q = f.probs(items)
    ratios = []
    for a in range(len(items) - 1):
        gap = q[a] - q[a + 1]
        if gap <= 0:
            raise DegenerateInstanceError(
                f"degenerate instance: f({items[a]}|S) <= f({items[a + 1]}|S) for S={list(items)}"
            )
        ratios.append((1 - w[items[a]] + w[items[a + 1]]) / gap)
    tau = min(ratios)
    ties = [a for a, r in enumerate(ratios) if r - tau <= TIE_TOL * max(1.0, abs(tau))]
    a_star = ties[0] if tie == "smallest" else ties[-1]
    return q, tau, a_star


def rank_hardness(model, p=None, tie="smallest"):
    """Build the partition tree under noiseless fractional feedback.

    At node ``S`` with scores ``w`` the stopping time is

        tau(S, w) = min_i (1 - w(i) + w(i+1)) / (f(i|S) - f(i+1|S))

    over consecutive members, the argmin ``i*`` splits ``S`` after ``i*`` and
    both children inherit ``w + tau * f(.|S)``.  ``J^N(f) = log(1/p)`` over the
    sum of ``tau`` across internal nodes.  ``tie`` picks the smallest or
    largest argmin.
    """
    if tie not in ("smallest", "largest"):
        raise ValueError("tie must be 'smallest' or 'largest'")
    f = relabel_to_identity(model)
    K = f.n_items
    p = min_separation(model) if p is None else check_separation(p)
    root = DgbtNode(tuple(range(K)), np.zeros(K))
    stack = [root]
    while stack:
        node = stack.pop()
        if len(node.items) == 1:
            continue
        q, tau, a_star = _split(f, node.items, node.w, tie)
        w_next = node.w.copy()
        for item, qi in zip(node.items, q):
            w_next[item] += tau * qi
        node.tau_bar = tau
        node.i_star = node.items[a_star]
        node.probs = tuple(q)
        node.high = DgbtNode(node.items[: a_star + 1], w_next)
        node.low = DgbtNode(node.items[a_star + 1 :], w_next.copy())
        stack.extend([node.low, node.high])
    total = sum(n.tau_bar for n in root.internal_nodes())
    return RankHardness(root, math.log(1 / p) / total, p)


def ancestor_identity_residuals(root):
    """For each internal node, ``sum over ancestors and self of tau * gap - 1``.

    The gap at an ancestor ``A`` is ``f(i*|A) - f(i*+1|A)`` for the node's own
    critical pair; every residual is zero on an exact tree.
    """
    out = []

    def walk(node, ancestors):
        if node.is_leaf():
            return
        chain = ancestors + [node]
        a = node.items.index(node.i_star)
        lo, hi = node.items[a], node.items[a + 1]
        total = 0.0
        for anc in chain:
            q = dict(zip(anc.items, anc.probs))
            total += anc.tau_bar * (q[lo] - q[hi])
        out.append(total - 1.0)
        walk(node.high, chain)
        walk(node.low, chain)

    walk(root, [])
    return out


def dgbt_to_dot(root):
    """Graphviz text for the partition tree."""
    lines = ["digraph dgbt {", "  node [shape=box];"]
    counter = [0]

    def label(node):
        s = "{" + ",".join(str(i) for i in node.items) + "}"
        if node.is_leaf():
            return s
        return f"{s}\\ntau={node.tau_bar:.6g} i*={node.i_star}"

    def walk(node):
        me = counter[0]
        counter[0] += 1
        lines.append(f'  n{me} [label="{label(node)}"];')
        if not node.is_leaf():
            for child in (node.high, node.low):
                cid = walk(child)
                lines.append(f"  n{me} -> n{cid};")
        return me

    walk(root)
    lines.append("}")
    return "\n".join(lines) + "\n"


def j_star_oa(K, p):
    """Worst-case ranking information rate ``log(1/p)(1-p)/(K-1+p)``."""
    K = check_int(K, "K", minimum=2)
    p = check_separation(p)
    return math.log(1 / p) * (1 - p) / (K - 1 + p)


@dataclass
class RankAllocation:
    weights: dict = field(default_factory=dict)

    def total(self):
        return math.fsum(self.weights.values())


def lambda_star_rank(K, p):
    """Optimal display allocation for ranking at the OA instance.

    Mass sits on the full set and on the suffix sets ``{n, ..., K}``.
    """
    K = check_int(K, "K", minimum=2)
    p = check_separation(p)
    c = K - 1 + p
    weights = {tuple(range(K)): (1 - p**K) / ((1 - p) * c)}
    for n in range(2, K):
        weights[tuple(range(n - 1, K))] = (1 - p ** (K - n + 1)) / c
    return RankAllocation(weights)


def d_s_sigma_hat(S, m, p):
    """KL rate of display ``S`` against the ranking with ``m`` and ``m+1`` swapped.

    Zero unless both ``m`` and ``m + 1`` are shown.
    """
    p = check_separation(p)
    S = tuple(sorted(S))
    if m not in S or m + 1 not in S:
        return 0.0
    i = sum(1 for j in S if j < m) + 1
    n = len(S)
    return math.log(1 / p) * p ** (i - 1) * (1 - p) ** 2 / (1 - p**n)


@dataclass
class LPReport:
    K: int
    p: float
    j_star: float
    primal: list
    dual_max: float
    violations: list
    n_sets: int = 0

    @property
    def ok(self):
        return not self.violations


def dual_weights(K, p):
    c = K - 1 + p
    return [1 / c] * (K - 2) + [(p + 1) / c]


def verify_lp(K, p, tol=1e-12):
    """Check the ranking lower-bound program at the OA instance.

    Primal rows ``sum_S d_S(m) lambda*(S)`` must equal ``J*`` for every swap
    ``m``; dual rows ``sum_m d_S(m) mu*(m)`` must stay below ``J*`` for every
    display set.
    """
    K = check_int(K, "K", minimum=2, maximum=14)
    p = check_separation(p)
    J = j_star_oa(K, p)
    lam = lambda_star_rank(K, p)
    violations = []
    primal = []
    for m in range(K - 1):
        row = math.fsum(d_s_sigma_hat(S, m, p) * w for S, w in lam.weights.items())
        primal.append(row)
        if abs(row - J) > tol:
            violations.append(("primal", m, row - J))
    mu = dual_weights(K, p)
    dual_max = -math.inf
    n_sets = 0
    for mask in range(1, 1 << K):
        S = tuple(i for i in range(K) if mask >> i & 1)
        if len(S) < 2:
            continue
        n_sets += 1
        row = math.fsum(d_s_sigma_hat(S, m, p) * mu[m] for m in range(K - 1))
        dual_max = max(dual_max, row)
        if row > J + tol:
            violations.append(("dual", S, J - row))
    return LPReport(K, p, J, primal, dual_max, violations, n_sets)


# --- bounds -------------------------------------------------------------------


def lower_bound_samples(delta, info):
    """Sample-count lower bound ``(log(1/delta) - log 2.4) / info``."""
    delta = check_delta(delta)
    if info <= 0:
        raise ValueError("info must be positive")
    return (math.log(1 / delta) - math.log(2.4)) / info


def error_bounds(M, K, p):
    """``(beta(K) p**M, (K-1) p**M)``: error bounds for NE and NP."""
    M = check_int(M, "M", minimum=1)
    K = check_int(K, "K", minimum=2)
    p = check_separation(p)
    return (2 ** (K - 1) - 1) * p**M, (K - 1) * p**M


def phi(K, p):
    """Gap factor ``(K-1+p) / ((1+p)(K-1))`` between ``J^N`` and ``J*``."""
    K = check_int(K, "K", minimum=2)
    p = check_separation(p)
    return (K - 1 + p) / ((1 + p) * (K - 1))
