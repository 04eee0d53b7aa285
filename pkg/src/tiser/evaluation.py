"""EM and token F1 scoring with per-dataset and token-usage reports."""

from __future__ import annotations

import string
from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

EM_POLICIES = ("normalized", "raw")
ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = set(string.punctuation) | {"“", "”", "‘", "’", "\u2013", "\u2014", "\u2026"}


def normalize_answer(s: Optional[str]) -> list[str]:
    """Lowercase, drop punctuation, drop articles, split on whitespace."""
    text = (s or "").lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    return [tok for tok in text.split() if tok not in ARTICLES]


def _golds(gold: Union[str, Sequence[str]]) -> list[str]:
    if isinstance(gold, str):
        return [gold]
    golds = list(gold)
    return golds if golds else [""]


def exact_match(pred: str, gold: Union[str, Sequence[str]], policy: str = "normalized") -> int:
    if policy not in EM_POLICIES:
        raise ValueError(f"unknown EM policy {policy!r}")
    for g in _golds(gold):
        if policy == "raw":
            if (pred or "") == g:
                return 1
        elif normalize_answer(pred) == normalize_answer(g):
            return 1
    return 0


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, gold: Union[str, Sequence[str]]) -> float:
    """Multiset token-overlap F1 after normalization; max over acceptable golds."""
    p = normalize_answer(pred)
    return max(_f1(p, normalize_answer(g)) for g in _golds(gold))


@dataclass(frozen=True)
class ScoredPrediction:
    id: str
    prediction: str
    gold: tuple[str, ...]
    em: int
    f1: float
    dataset: str = "other"

    def __post_init__(self) -> None:
        if self.em not in (0, 1):
            raise ValueError("em must be 0 or 1")
        if not 0.0 <= self.f1 <= 1.0:
            raise ValueError("f1 must lie in [0, 1]")
        if self.em == 1 and self.f1 != 1.0:
            raise ValueError("em=1 requires f1=1")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "prediction": self.prediction,
            "gold": list(self.gold),
            "em": self.em,
            "f1": self.f1,
        }


def score(sample_id: str, prediction: str, gold: Union[str, Sequence[str]], dataset: str = "other",
          policy: str = "normalized") -> ScoredPrediction:
    golds = tuple(_golds(gold))
    em = exact_match(prediction, golds, policy)
    f1 = token_f1(prediction, golds)
    return ScoredPrediction(sample_id, prediction, golds, em, f1, dataset)


@dataclass(frozen=True)
class DatasetScore:
    em_pct: float
    f1_pct: float
    n: int


@dataclass(frozen=True)
class EvalReport:
    per_dataset: "OrderedDict[str, DatasetScore]"
    em_policy: str = "normalized"

    @property
    def macro_em(self) -> float:
        vals = [d.em_pct for d in self.per_dataset.values()]
        return sum(vals) / len(vals) if vals else 0.0

    @property
    def macro_f1(self) -> float:
        vals = [d.f1_pct for d in self.per_dataset.values()]
        return sum(vals) / len(vals) if vals else 0.0

    def to_dict(self) -> dict:
        return {
            "em_policy": self.em_policy,
            "datasets": {k: {"em_pct": v.em_pct, "f1_pct": v.f1_pct, "n": v.n} for k, v in self.per_dataset.items()},
            "macro_em": self.macro_em,
            "macro_f1": self.macro_f1,
        }

    def format_table(self, label: str = "model") -> str:
        """One row per metric, datasets then the macro average as columns, one decimal."""
        cols = list(self.per_dataset) + ["Macro Avg."]
        em = [f"{d.em_pct:.1f}" for d in self.per_dataset.values()] + [f"{self.macro_em:.1f}"]
        f1 = [f"{d.f1_pct:.1f}" for d in self.per_dataset.values()] + [f"{self.macro_f1:.1f}"]
        n = [str(d.n) for d in self.per_dataset.values()] + [str(sum(d.n for d in self.per_dataset.values()))]
        rows = [(f"{label} EM", em), (f"{label} F1", f1), ("n", n)]
        label_w = max(len(r[0]) for r in rows)
        widths = [max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)]
        lines = [" " * label_w + " | " + " | ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines.append("-" * len(lines[0]))
        for name, vals in rows:
            lines.append(name.ljust(label_w) + " | " + " | ".join(v.rjust(w) for v, w in zip(vals, widths)))
        lines.append(f"EM policy: {self.em_policy}")
        return "\n".join(lines)


def aggregate(scored: Iterable[ScoredPrediction], labels: Optional[Sequence[str]] = None,
              em_policy: str = "normalized") -> EvalReport:
    """Per-dataset means as percentages plus an unweighted macro average.

    ``labels`` overrides each prediction's own dataset label when given.
    """
    scored = list(scored)
    if labels is not None and len(labels) != len(scored):
        raise ValueError("labels must align with scored predictions")
    sums: "OrderedDict[str, list]" = OrderedDict()
    for i, s in enumerate(scored):
        label = labels[i] if labels is not None else s.dataset
        if not label:
            raise ValueError(f"prediction {s.id!r} has no dataset label")
        acc = sums.setdefault(label, [0, 0.0, 0])
        acc[0] += s.em
        acc[1] += s.f1
        acc[2] += 1
    per = OrderedDict(
        (k, DatasetScore(100.0 * em / n, 100.0 * f1 / n, n)) for k, (em, f1, n) in sums.items()
    )
    return EvalReport(per, em_policy)


# ---------------------------------------------------------------------------
# Token overhead
# ---------------------------------------------------------------------------

_STAGE_KEYS = ("reasoning", "timeline", "reflection", "answer", "other")


@dataclass(frozen=True)
class TokenOverheadReport:
    n: int
    overall_avg: float
    answer_avg: float
    reasoning_avg: Optional[float] = None
    timeline_avg: Optional[float] = None
    reflection_avg: Optional[float] = None
    other_avg: float = 0.0

    def __post_init__(self) -> None:
        for v in (self.overall_avg, self.answer_avg, self.reasoning_avg, self.timeline_avg,
                  self.reflection_avg, self.other_avg):
            if v is not None and v < 0:
                raise ValueError("token averages must be >= 0")

    def rows(self) -> list[tuple[str, Optional[float]]]:
        return [
            ("Overall", self.overall_avg),
            ("Reasoning", self.reasoning_avg),
            ("Timeline", self.timeline_avg),
            ("Reflection", self.reflection_avg),
        ]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "overall_avg": self.overall_avg,
            "reasoning_avg": self.reasoning_avg,
            "timeline_avg": self.timeline_avg,
            "reflection_avg": self.reflection_avg,
            "answer_avg": self.answer_avg,
            "other_avg": self.other_avg,
        }

    def format_table(self) -> str:
        lines = ["Average token usage per response (whitespace tokens)", f"{'Stage':<12}| Tokens"]
        lines.append("-" * len(lines[1]))
        for name, val in self.rows():
            lines.append(f"{name:<12}| {'-' if val is None else f'{val:.2f}'}")
        lines.append(f"{'(answer)':<12}| {self.answer_avg:.2f}")
        lines.append(f"n = {self.n}")
        return "\n".join(lines)


def _result_tokens(result) -> tuple[dict, bool]:
    """Token counts and whether the run used untagged (standard) prompting."""
    if isinstance(result, dict):
        tokens = result.get("tokens") or {}
        return {k: int(tokens.get(k, 0)) for k in _STAGE_KEYS}, result.get("mode") == "standard"
    return result.tokens.to_dict(), result.mode == "standard"


def token_overhead(results: Iterable) -> TokenOverheadReport:
    """Average whitespace-token usage per response, split by stage.

    Accepts pipeline results or their JSON dicts. Every generation call of a
    run counts, so revision rounds add to the total. Standard-mode runs only
    have answer tokens; if every run is standard the stage averages are None.
    """
    rows = [_result_tokens(r) for r in results]
    n = len(rows)
    if n == 0:
        return TokenOverheadReport(0, 0.0, 0.0)
    sums = {k: sum(t[k] for t, _std in rows) for k in _STAGE_KEYS}
    all_standard = all(std for _t, std in rows)
    total = sum(sums.values())
    avg = {k: v / n for k, v in sums.items()}
    if all_standard:
        return TokenOverheadReport(n, total / n, avg["answer"], other_avg=avg["other"])
    return TokenOverheadReport(
        n, total / n, avg["answer"], avg["reasoning"], avg["timeline"], avg["reflection"], avg["other"]
    )

