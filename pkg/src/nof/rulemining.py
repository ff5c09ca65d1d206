"""Transactions, frequent itemsets, and association rules.

Summary rows become transactions with exactly one item per attribute:
categorical values pass through as ``attr=value`` items and numeric values
fall into the half-open interval ``(lo, hi]`` between consecutive decision
tree split points (with infinite sentinels, rendered ``attr<=hi`` /
``attr>lo``; an attribute with no split points yields the catch-all
``attr=ANY``). Itemsets are mined with the classic level-wise join/prune and
rules carry support, confidence, and the reliability measure
``|confidence - support(consequent)|``.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, MissingInputError, ParseError

_INF = math.inf

_FORBIDDEN = re.compile(r"[;&\n=<>≤∈]")


def _check_token(token: str, what: str) -> str:
    if not token:
        raise ConfigError(f"{what} must be nonempty")
    if _FORBIDDEN.search(token):
        raise ConfigError(f"{what} {token!r} contains a reserved character")
    return token


def _fmt_num(v: float) -> str:
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


@dataclass(frozen=True, order=True)
class Item:
    """One transaction element in canonical form.

    kind "eq"      -> attribute = value
    kind "interval"-> attribute in (lo, hi]   (infinite bounds allowed)
    kind "label"   -> a bare pattern name (used for rule consequents once
                      cluster labels have been aligned to expert vocabulary)
    The canonical string is injective over constructible items (reserved
    characters are rejected in tokens), so equality, hashing, and ordering
    all run on it alone.
    """

    canonical: str
    attribute: str = field(compare=False, default="")
    kind: str = field(compare=False, default="eq")
    value: str = field(compare=False, default="")
    lo: float = field(compare=False, default=-_INF)
    hi: float = field(compare=False, default=_INF)


def eq_item(attribute: str, value: str) -> Item:
    _check_token(attribute, "attribute")
    _check_token(value, "value")
    if value == "ANY":
        raise ConfigError("the value 'ANY' is reserved for catch-all interval items")
    return Item(
        canonical=f"{attribute}={value}", attribute=attribute, kind="eq", value=value
    )


def label_item(name: str) -> Item:
    _check_token(name, "label")
    return Item(canonical=name, attribute="", kind="label", value=name)


def interval_item(attribute: str, lo: float, hi: float) -> Item:
    _check_token(attribute, "attribute")
    if not lo < hi:
        raise ConfigError(f"empty interval ({lo}, {hi}] for {attribute!r}")
    if lo == -_INF and hi == _INF:
        canonical = f"{attribute}=ANY"
    elif lo == -_INF:
        canonical = f"{attribute}≤{_fmt_num(hi)}"
    elif hi == _INF:
        canonical = f"{attribute}>{_fmt_num(lo)}"
    else:
        canonical = f"{attribute}∈({_fmt_num(lo)},{_fmt_num(hi)}]"
    return Item(
        canonical=canonical, attribute=attribute, kind="interval", lo=float(lo), hi=float(hi)
    )


_INTERVAL_RE = re.compile(r"^(?P<attr>[^=<>≤∈]+)∈\((?P<lo>[^,]+),(?P<hi>[^\]]+)\]$")


def parse_item(text: str) -> Item:
    """Parse a canonical item string; bare names become pattern labels."""
    text = text.strip()
    if not text:
        raise ConfigError("empty item")
    m = _INTERVAL_RE.match(text)
    if m:
        return interval_item(m.group("attr"), float(m.group("lo")), float(m.group("hi")))
    for sep in ("≤", "<="):
        if sep in text:
            attr, _, v = text.partition(sep)
            return interval_item(attr, -_INF, float(v))
    if ">" in text:
        attr, _, v = text.partition(">")
        return interval_item(attr, float(v), _INF)
    if "=" in text:
        attr, _, v = text.partition("=")
        if v == "ANY":
            return interval_item(attr, -_INF, _INF)
        return eq_item(attr, v)
    return label_item(text)


Transaction = frozenset[Item]


def discretize(
    rows: list[dict[str, float | str]], split_points: dict[str, list[float]]
) -> list[Transaction]:
    """Map each row to a transaction with exactly one item per attribute."""
    for attr, pts in split_points.items():
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigError(f"split points for {attr!r} must be strictly ascending")
    out: list[Transaction] = []
    for i, row in enumerate(rows):
        items: list[Item] = []
        for attr, value in row.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                pts = split_points.get(attr, [])
                v = float(value)
                j = 0
                while j < len(pts) and v > pts[j]:
                    j += 1
                lo = pts[j - 1] if j > 0 else -_INF
                hi = pts[j] if j < len(pts) else _INF
                items.append(interval_item(attr, lo, hi))
            else:
                items.append(eq_item(attr, str(value)))
        tx = frozenset(items)
        if len(tx) != len(row):
            raise ConfigError(f"row {i} produced duplicate items")
        out.append(tx)
    return out


def _support_count(candidate: frozenset[Item], transactions: list[Transaction]) -> int:
    return sum(1 for t in transactions if candidate <= t)


def apriori(
    transactions: list[Transaction], beta_sup: float, max_len: int | None = None
) -> dict[frozenset[Item], float]:
    """All itemsets with support >= beta_sup, by level-wise join and prune.

    max_len caps the itemset size when set; leave it None for the complete
    (downward-closed) collection.
    """
    if not 0 < beta_sup <= 1:
        raise ConfigError(f"beta_sup must lie in (0, 1], got {beta_sup}")
    if not transactions:
        raise ConfigError("transaction list must be nonempty")
    n = len(transactions)
    frequent: dict[frozenset[Item], float] = {}

    singles = sorted({item for t in transactions for item in t})
    level: list[tuple[Item, ...]] = []
    for item in singles:
        sup = _support_count(frozenset([item]), transactions) / n
        if sup >= beta_sup:
            frequent[frozenset([item])] = sup
            level.append((item,))
    k = 2
    while level and (max_len is None or k <= max_len):
        # join: combine k-1 sets sharing their first k-2 items
        buckets: dict[tuple[Item, ...], list[Item]] = {}
        for tup in level:
            buckets.setdefault(tup[:-1], []).append(tup[-1])
        prev = set(map(frozenset, level))
        next_level: list[tuple[Item, ...]] = []
        for prefix in sorted(buckets):
            tails = sorted(buckets[prefix])
            for a in range(len(tails)):
                for b in range(a + 1, len(tails)):
                    cand = prefix + (tails[a], tails[b])
                    cand_set = frozenset(cand)
                    # prune: all (k-1)-subsets must be frequent
                    if any(cand_set - {item} not in prev for item in cand):
                        continue
                    sup = _support_count(cand_set, transactions) / n
                    if sup >= beta_sup:
                        frequent[cand_set] = sup
                        next_level.append(cand)
        level = sorted(next_level)
        k += 1
    return frequent


@dataclass(frozen=True)
class AssociationRule:
    antecedent: frozenset[Item]
    consequent: frozenset[Item]
    support: float
    confidence: float
    reliability: float

    def canonical(self) -> str:
        ante = "&".join(i.canonical for i in sorted(self.antecedent))
        cons = "&".join(i.canonical for i in sorted(self.consequent))
        return f"{ante} -> {cons}"

    def sort_key(self) -> tuple:
        return (
            tuple(i.canonical for i in sorted(self.antecedent)),
            tuple(i.canonical for i in sorted(self.consequent)),
        )


def generate_rules(
    itemsets: dict[frozenset[Item], float],
    beta_conf: float,
    transactions: list[Transaction],
    single_consequent: bool = True,
) -> list[AssociationRule]:
    """Antecedent/consequent partitions of frequent itemsets at confidence
    >= beta_conf. Consequents are single items unless single_consequent is
    off, in which case every nonempty proper partition is emitted."""
    if not 0 < beta_conf <= 1:
        raise ConfigError(f"beta_conf must lie in (0, 1], got {beta_conf}")
    n = len(transactions)
    if n == 0:
        raise ConfigError("transaction list must be nonempty")
    rules: list[AssociationRule] = []
    for itemset, support in itemsets.items():
        if len(itemset) < 2:
            continue
        members = sorted(itemset)
        if single_consequent:
            consequents = [frozenset([m]) for m in members]
        else:
            consequents = [
                frozenset(combo)
                for size in range(1, len(members))
                for combo in _combinations(members, size)
            ]
        for cons in consequents:
            ante = itemset - cons
            sup_ante = itemsets.get(ante)
            if sup_ante is None:
                sup_ante = _support_count(ante, transactions) / n
            if sup_ante == 0:
                continue
            conf = support / sup_ante
            if conf < beta_conf:
                continue
            sup_cons = itemsets.get(cons)
            if sup_cons is None:
                sup_cons = _support_count(cons, transactions) / n
            rules.append(
                AssociationRule(
                    antecedent=ante,
                    consequent=cons,
                    support=support,
                    confidence=conf,
                    reliability=abs(conf - sup_cons),
                )
            )
    rules.sort(key=AssociationRule.sort_key)
    return rules


def _combinations(items: list[Item], size: int):
    from itertools import combinations

    return combinations(items, size)


def reliability(rule: AssociationRule, transactions: list[Transaction]) -> float:
    """|confidence(A -> C) - support(C)|, recomputed from the transactions."""
    n = len(transactions)
    if n == 0:
        raise ConfigError("transaction list must be nonempty")
    n_ante = _support_count(rule.antecedent, transactions)
    if n_ante == 0:
        raise ConfigError("rule antecedent has zero support in these transactions")
    n_both = _support_count(rule.antecedent | rule.consequent, transactions)
    sup_cons = _support_count(rule.consequent, transactions) / n
    return abs(n_both / n_ante - sup_cons)


# ---------------------------------------------------------------------------
# rules CSV (the hand-off format consumed by the ontology stage)
# ---------------------------------------------------------------------------

_CSV_HEADER = ["antecedent", "consequent", "support", "confidence", "reliability"]


def write_rules_csv(rules: list[AssociationRule], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=";")
        w.writerow(_CSV_HEADER)
        for r in rules:
            w.writerow(
                [
                    "&".join(i.canonical for i in sorted(r.antecedent)),
                    "&".join(i.canonical for i in sorted(r.consequent)),
                    repr(float(r.support)),
                    repr(float(r.confidence)),
                    repr(float(r.reliability)),
                ]
            )


def read_rules_csv(path: str | Path) -> list[AssociationRule]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"rules file not found: {path}")
    rules: list[AssociationRule] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ParseError(f"rules header must be {';'.join(_CSV_HEADER)}", line=1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 5:
                raise ParseError(f"expected 5 fields, got {len(rec)}", line=lineno)
            try:
                ante = frozenset(parse_item(t) for t in rec[0].split("&") if t)
                cons = frozenset(parse_item(t) for t in rec[1].split("&") if t)
                rules.append(
                    AssociationRule(
                        antecedent=ante,
                        consequent=cons,
                        support=float(rec[2]),
                        confidence=float(rec[3]),
                        reliability=float(rec[4]),
                    )
                )
            except (ValueError, ConfigError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return rules
