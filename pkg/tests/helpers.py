"""Independent oracles used to check the library against first principles.

Everything here is deliberately written from scratch (plain Python loops,
Counter, itertools) rather than calling back into the package, so a test
failure localizes to the implementation, not to shared code.
"""
from __future__ import annotations

import math
from collections import Counter
from itertools import combinations

import numpy as np

# ---------------------------------------------------------------------------
# adjusted Rand index
# ---------------------------------------------------------------------------


def adjusted_rand_index(a, b) -> float:
    a = list(a)
    b = list(b)
    n = len(a)
    pairs = Counter(zip(a, b))
    rows = Counter(a)
    cols = Counter(b)

    def c2(x):
        return x * (x - 1) / 2

    sum_pairs = sum(c2(v) for v in pairs.values())
    sum_rows = sum(c2(v) for v in rows.values())
    sum_cols = sum(c2(v) for v in cols.values())
    total = c2(n)
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = (sum_rows + sum_cols) / 2
    if max_index == expected:
        return 1.0
    return (sum_pairs - expected) / (max_index - expected)


# ---------------------------------------------------------------------------
# EM sanity
# ---------------------------------------------------------------------------


def assert_loglik_monotone(model, slack: float = 1e-9) -> None:
    hist = model.loglik_history
    for prev, curr in zip(hist, hist[1:]):
        assert curr >= prev - slack, f"log-likelihood decreased: {prev} -> {curr}"


# ---------------------------------------------------------------------------
# exhaustive 2-partition by SSE (divisive oracle)
# ---------------------------------------------------------------------------


def best_two_partition_by_sse(points: np.ndarray) -> tuple[frozenset, frozenset]:
    """The optimal 2-way split of row indices by total within-group SSE."""
    n = points.shape[0]

    def sse(idx):
        sub = points[list(idx)]
        return float(np.sum((sub - sub.mean(axis=0)) ** 2))

    best = None
    indices = list(range(n))
    for size in range(1, n // 2 + 1):
        for left in combinations(indices, size):
            right = tuple(i for i in indices if i not in left)
            cost = sse(left) + sse(right)
            if best is None or cost < best[0]:
                best = (cost, frozenset(left), frozenset(right))
    return best[1], best[2]


# ---------------------------------------------------------------------------
# brute-force gain-ratio split search (tree oracle)
# ---------------------------------------------------------------------------


def _entropy_of(labels) -> float:
    counts = Counter(labels)
    n = len(labels)
    h = 0.0
    for key in sorted(counts):
        p = counts[key] / n
        h -= p * math.log2(p)
    return h


def _gain_and_split_info(labels, branches) -> tuple[float, float]:
    n = len(labels)
    gain = _entropy_of(labels)
    split_info = 0.0
    for branch in branches:
        if not branch:
            continue
        frac = len(branch) / n
        gain -= frac * _entropy_of(branch)
        split_info -= frac * math.log2(frac)
    return gain, split_info


def brute_force_root_split(rows, labels, min_leaf=1):
    """Exhaustive (attribute, threshold) search by gain ratio.

    Candidates: midpoint thresholds for numeric attributes (each side needs
    min_leaf rows) and one multiway candidate per categorical attribute with
    at least two values and at least two branches of min_leaf rows. Only
    attributes whose best information gain reaches the mean across attributes
    stay eligible; the maximum gain ratio wins, with scores within 1e-12
    treated as tied and ties resolving to the earlier attribute then the
    lower threshold. Returns (attribute, threshold|None) or None when no
    admissible split has positive gain.
    """
    eps = 1e-12
    attributes = list(rows[0].keys())
    per_attr = []
    for attr in attributes:
        values = [r[attr] for r in rows]
        numeric = isinstance(values[0], (int, float)) and not isinstance(values[0], bool)
        cands = []
        if numeric:
            distinct = sorted(set(float(v) for v in values))
            for lo, hi in zip(distinct, distinct[1:]):
                thr = (lo + hi) / 2.0
                left = [lab for v, lab in zip(values, labels) if float(v) <= thr]
                right = [lab for v, lab in zip(values, labels) if float(v) > thr]
                if min(len(left), len(right)) < min_leaf:
                    continue
                gain, si = _gain_and_split_info(labels, [left, right])
                if si > 0:
                    cands.append((thr, gain, gain / si))
        else:
            distinct = sorted(set(str(v) for v in values))
            if len(distinct) >= 2:
                branches = [
                    [lab for v, lab in zip(values, labels) if str(v) == val]
                    for val in distinct
                ]
                if sum(1 for b in branches if len(b) >= min_leaf) >= 2:
                    gain, si = _gain_and_split_info(labels, branches)
                    if si > 0:
                        cands.append((None, gain, gain / si))
        if cands:
            per_attr.append((attr, cands))
    if not per_attr:
        return None
    attr_gains = [max(g for _, g, _ in cands) for _, cands in per_attr]
    mean_gain = sum(attr_gains) / len(attr_gains)
    best = None
    for (attr, cands), g_a in zip(per_attr, attr_gains):
        if g_a < mean_gain - eps:
            continue
        for thr, gain, ratio in cands:
            if best is None or ratio > best[2] + eps:
                best = (attr, thr, ratio, gain)
    if best is None or best[3] <= eps:
        return None
    return best[0], best[1]


# ---------------------------------------------------------------------------
# brute-force frequent itemsets (apriori oracle)
# ---------------------------------------------------------------------------


def brute_force_itemsets(transactions, beta_sup):
    """Enumerate every nonempty itemset over the observed items."""
    universe = sorted({item for t in transactions for item in t})
    n = len(transactions)
    out = {}
    for size in range(1, len(universe) + 1):
        for combo in combinations(universe, size):
            cand = frozenset(combo)
            sup = sum(1 for t in transactions if cand <= t) / n
            if sup >= beta_sup:
                out[cand] = sup
    return out


# ---------------------------------------------------------------------------
# brute-force knowledge partitioning (set-algebra oracle)
# ---------------------------------------------------------------------------


def brute_force_partition(mined, expert, beta_sup, beta_conf, pi_min):
    """Direct evaluation of the knowledge-category definitions.

    mined:  list of (antecedent frozenset[str], consequent str, support,
            confidence, reliability)
    expert: list of (rule_id, antecedent frozenset[str], consequent str,
            negated bool)
    Matching here is plain syntactic equality, which is what the random
    universes in the property tests use. Returns dicts of canonical-string
    sets per category.
    """
    unique = {}
    for ante, cons, sup, conf, rel in mined:
        unique[(ante, cons)] = (ante, cons, sup, conf, rel)
    qualified = [
        r for r in unique.values() if r[2] >= beta_sup and r[3] >= beta_conf
    ]

    def matches(rule, e):
        return (not e[3]) and rule[0] == e[1] and rule[1] == e[2]

    def contra(rule, e):
        return e[3] and rule[0] == e[1] and rule[1] == e[2]

    def name(rule):
        return "&".join(sorted(rule[0])) + "->" + rule[1]

    known_hi, known_lw, novel_hi, contr, residue = set(), set(), set(), set(), set()
    for rule in qualified:
        is_matched = any(matches(rule, e) for e in expert)
        is_contra = any(contra(rule, e) for e in expert)
        strong = rule[4] >= pi_min
        if is_contra:
            contr.add(name(rule))
        elif is_matched:
            (known_hi if strong else known_lw).add(name(rule))
        elif strong:
            novel_hi.add(name(rule))
        else:
            residue.add(name(rule))
    missing = {
        e[0]
        for e in expert
        if not any(matches(rule, e) for rule in qualified)
    }
    return {
        "arec": {name(r) for r in qualified},
        "known_hi": known_hi,
        "known_lw": known_lw,
        "novel_hi": novel_hi,
        "contr": contr,
        "residue": residue,
        "missing": missing,
    }
