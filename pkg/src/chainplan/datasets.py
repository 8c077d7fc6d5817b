"""Golden query/plan datasets: the shared JSONL format for retrieval
exemplars and evaluation gold."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .plan import Plan, plan_from_data, serialize_plan


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class GoldenExample:
    id: str
    query: str
    gold: Plan

    @property
    def gold_text(self) -> str:
        return serialize_plan(self.gold)


def load_golden_dataset(source: str | Path) -> list[GoldenExample]:
    """Load JSON lines of {"query": str, "gold": <plan wire format>}."""
    path = Path(source)
    examples: list[GoldenExample] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc}", line=line_no) from exc
        if not isinstance(record, dict) or "query" not in record or "gold" not in record:
            raise DatasetError("record needs query and gold fields", line=line_no)
        outcome = plan_from_data(record["gold"])
        if not outcome.ok:
            raise DatasetError(f"gold plan does not match the wire format: {outcome.detail}", line=line_no)
        examples.append(GoldenExample(id=f"ex{line_no:03d}", query=record["query"], gold=outcome.plan))
    return examples


def save_golden_dataset(examples: list[GoldenExample], path: str | Path) -> None:
    from .plan import plan_to_data

    lines = [
        json.dumps({"query": ex.query, "gold": plan_to_data(ex.gold)}, ensure_ascii=False)
        for ex in examples
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
