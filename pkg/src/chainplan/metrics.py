"""Scoring predicted plans against gold plans.

Tool-selection rates compare tool-name multisets: necessary = predicted
intersect gold, irrelevant = predicted minus gold, missing = gold minus
predicted, so IR + NR = 1 for every parsed nonempty prediction. The
hallucination rate counts nonexistent resources per unit, where a plan has
one unit per tool name plus one per argument assignment. BLEU and ROUGE-L F1
run over a canonical serialization split on JSON structural characters, which
makes both scores stable across formatting.

Unparseable predictions contribute only to the invalid-JSON rate; all other
aggregates average over the parsed examples.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .plan import (
    ListOf,
    Literal,
    Plan,
    PREV_REF_PATTERN,
    PrevRef,
    parse_plan,
    serialize_plan,
)
from .registry import Registry


def tool_selection_scores(predicted: Plan, gold: Plan) -> tuple[float, float, float]:
    """(irrelevant rate, necessary rate, missing rate) over tool multisets."""
    pred = Counter(predicted.tool_sequence)
    gold_counts = Counter(gold.tool_sequence)
    necessary = sum((pred & gold_counts).values())
    total_pred = sum(pred.values())
    total_gold = sum(gold_counts.values())
    if total_pred == 0:
        ir, nr = 0.0, 0.0
    else:
        ir = (total_pred - necessary) / total_pred
        nr = necessary / total_pred
    mr = (total_gold - necessary) / total_gold if total_gold else 0.0
    return ir, nr, mr


def _prev_like_literal(value) -> bool:
    """A string literal that looks like a reference but failed the exact
    pattern: a hallucinated resource, never silently coerced."""
    return (
        isinstance(value, Literal)
        and isinstance(value.value, str)
        and value.value.startswith("$$PREV")
        and not PREV_REF_PATTERN.match(value.value)
    )


def _argument_hallucinated(value, position: int) -> bool:
    if isinstance(value, PrevRef):
        return value.index >= position or value.index < 0
    if _prev_like_literal(value):
        return True
    if isinstance(value, ListOf):
        return any(_argument_hallucinated(item, position) for item in value.elements)
    return False


def hallucination_rate(predicted: Plan, registry: Registry) -> float:
    """Hallucinated units / total units.

    Units: one per call for the tool name, one per argument assignment. A
    unit is hallucinated iff the tool name is unknown (which also condemns
    that call's argument units, since arguments of a nonexistent tool are
    nonexistent resources), the argument name is unknown for the tool, a
    reference does not point strictly backwards, or a $$PREV-like literal
    failed the exact pattern. A plan with zero units scores 0.
    """
    units = 0
    hallucinated = 0
    for position, call in enumerate(predicted.calls):
        spec = registry.get(call.tool_name)
        units += 1
        if spec is None:
            hallucinated += 1
        for name, value in call.arguments:
            units += 1
            if spec is None or spec.argument(name) is None:
                hallucinated += 1
            elif _argument_hallucinated(value, position):
                hallucinated += 1
    return hallucinated / units if units else 0.0


def plan_tokens(plan: Plan) -> list[str]:
    """Canonical token stream: serialize, then split keeping each JSON
    structural character as its own token."""
    return text_tokens(serialize_plan(plan))


_STRUCTURAL = set('{}[],:"')


def text_tokens(text: str) -> list[str]:
    tokens: list[str] = []
    buffer: list[str] = []
    for ch in text:
        if ch in _STRUCTURAL or ch.isspace():
            if buffer:
                tokens.append("".join(buffer))
                buffer = []
            if ch in _STRUCTURAL:
                tokens.append(ch)
        else:
            buffer.append(ch)
    if buffer:
        tokens.append("".join(buffer))
    return tokens


def bleu(predicted_tokens: list[str], gold_tokens: list[str]) -> float:
    """Sentence-level BLEU, 4-gram, uniform weights.

    Modified n-gram precisions with add-one smoothing on higher-order zeros
    (unigram precision stays unsmoothed), times a brevity penalty
    exp(1 - |gold| / |pred|) when the prediction is shorter than the gold.
    """
    if not gold_tokens:
        raise ValueError("gold token stream must not be empty")
    if not predicted_tokens:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        pred_ngrams = Counter(
            tuple(predicted_tokens[i : i + n]) for i in range(len(predicted_tokens) - n + 1)
        )
        gold_ngrams = Counter(
            tuple(gold_tokens[i : i + n]) for i in range(len(gold_tokens) - n + 1)
        )
        matches = sum((pred_ngrams & gold_ngrams).values())
        total = sum(pred_ngrams.values())
        if n == 1:
            if matches == 0:
                return 0.0
            precision = matches / total
        elif matches == 0:
            precision = 1.0 / (total + 1)
        else:
            precision = matches / total
        log_sum += 0.25 * math.log(precision)
    brevity = 1.0
    if len(predicted_tokens) < len(gold_tokens):
        brevity = math.exp(1.0 - len(gold_tokens) / len(predicted_tokens))
    return brevity * math.exp(log_sum)


def _lcs_length(a: list[str], b: list[str]) -> int:
    # Two-row dynamic program, O(len(a) * len(b)) time, O(len(b)) space.
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def rouge_l_f1(predicted_tokens: list[str], gold_tokens: list[str]) -> float:
    """F1 over the longest common subsequence; 0 when there is no overlap."""
    if not gold_tokens:
        raise ValueError("gold token stream must not be empty")
    if not predicted_tokens:
        return 0.0
    lcs = _lcs_length(predicted_tokens, gold_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(predicted_tokens)
    recall = lcs / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def correct_path(predicted: Plan, gold: Plan) -> bool:
    """Whether gold's tool sequence is a (not necessarily contiguous)
    subsequence of the predicted tool sequence."""
    gold_seq = gold.tool_sequence
    if not gold_seq:
        return True
    it = iter(predicted.tool_sequence)
    return all(any(tool == step for step in it) for tool in gold_seq)


@dataclass(frozen=True)
class EvalRecord:
    query: str
    gold: Plan
    predicted_text: str


@dataclass(frozen=True)
class ExampleScores:
    query: str
    invalid_json: bool
    ir: float | None = None
    nr: float | None = None
    mr: float | None = None
    hr: float | None = None
    bleu: float | None = None
    rouge_l_f1: float | None = None
    correct_path: bool | None = None


@dataclass(frozen=True)
class MetricsReport:
    examples: tuple[ExampleScores, ...]
    aggregates: dict[str, float | None]
    counts: dict[str, int]

    def to_json(self) -> str:
        return json.dumps(
            {
                "aggregates": self.aggregates,
                "counts": self.counts,
                "examples": [scores.__dict__ for scores in self.examples],
            },
            indent=2,
        )


def score_example(record: EvalRecord, registry: Registry) -> ExampleScores:
    outcome = parse_plan(record.predicted_text)
    if not outcome.ok:
        return ExampleScores(query=record.query, invalid_json=True)
    predicted = outcome.plan
    ir, nr, mr = tool_selection_scores(predicted, record.gold)
    return ExampleScores(
        query=record.query,
        invalid_json=False,
        ir=ir,
        nr=nr,
        mr=mr,
        hr=hallucination_rate(predicted, registry),
        bleu=bleu(plan_tokens(predicted), plan_tokens(record.gold)),
        rouge_l_f1=rouge_l_f1(plan_tokens(predicted), plan_tokens(record.gold)),
        correct_path=correct_path(predicted, record.gold),
    )


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def evaluate_dataset(records: list[EvalRecord], registry: Registry,
                     traces: list | None = None) -> MetricsReport:
    """Score every record; deterministic ordered reduction.

    Tool/argument/solution aggregates average over parsed examples; the
    invalid-JSON rate covers all examples. Call and token counts are filled
    in when pipeline traces are supplied.
    """
    if not records:
        raise ValueError("dataset must not be empty")
    scored = [score_example(record, registry) for record in records]
    parsed = [s for s in scored if not s.invalid_json]
    aggregates: dict[str, float | None] = {
        "ir": _mean([s.ir for s in parsed]),
        "nr": _mean([s.nr for s in parsed]),
        "mr": _mean([s.mr for s in parsed]),
        "hr": _mean([s.hr for s in parsed]),
        "bleu": _mean([s.bleu for s in parsed]),
        "rouge_l_f1": _mean([s.rouge_l_f1 for s in parsed]),
        "invalid_json_rate": sum(s.invalid_json for s in scored) / len(scored),
        "correct_path_rate": _mean([1.0 if s.correct_path else 0.0 for s in parsed]),
    }
    counts = {
        "examples": len(scored),
        "parsed": len(parsed),
        "llm_calls": sum(t.llm_calls for t in traces) if traces else 0,
        "prompt_tokens": sum(t.prompt_tokens for t in traces) if traces else 0,
        "completion_tokens": sum(t.completion_tokens for t in traces) if traces else 0,
    }
    return MetricsReport(examples=tuple(scored), aggregates=aggregates, counts=counts)


_METRIC_COLUMNS = (
    ("ir", "IR", "v"),
    ("nr", "NR", "^"),
    ("hr", "HR", "v"),
    ("mr", "MR", "v"),
    ("bleu", "BLEU", "^"),
    ("rouge_l_f1", "ROUGE-L-F1", "^"),
    ("invalid_json_rate", "Invalid JSON", "v"),
    ("correct_path_rate", "Correct Path", "^"),
)

_ARROWS = {"v": "↓", "^": "↑"}


def _format_value(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def render_table(report: MetricsReport) -> str:
    lines = ["metric              value", "-" * 26]
    for key, label, direction in _METRIC_COLUMNS:
        arrow = _ARROWS[direction]
        lines.append(f"{label + ' ' + arrow:<20}{_format_value(report.aggregates[key])}")
    lines.append("-" * 26)
    lines.append(f"examples: {report.counts['examples']}  parsed: {report.counts['parsed']}")
    if report.counts["llm_calls"]:
        lines.append(
            f"llm calls: {report.counts['llm_calls']}  tokens: "
            f"{report.counts['prompt_tokens']}+{report.counts['completion_tokens']}"
        )
    return "\n".join(lines)


def render_csv(report: MetricsReport) -> str:
    header = ",".join(key for key, _, _ in _METRIC_COLUMNS)
    values = ",".join(_format_value(report.aggregates[key]) for key, _, _ in _METRIC_COLUMNS)
    return f"{header}\n{values}\n"
