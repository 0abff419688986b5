"""Report stream: one JSON object per line, crash-safe, append-only.

A run writes one line per outer iteration plus a final summary line carrying
the TM-score trajectory. Reading tolerates a truncated final line (a crash
mid-write loses at most that line) but rejects corruption anywhere else.
"""

from __future__ import annotations

import json


def write_record(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True) + "\n")
    fh.flush()


def read_report(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    records = []
    last = len(lines) - 1
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == last:
                break  # torn final line from an interrupted write
            raise ValueError(f"malformed report line {i + 1}") from None
    return records


def _selected_scores(record: dict) -> dict:
    for cand in record["candidates"]:
        if cand["pair"] == record["selected"]:
            return cand
    raise ValueError(f"report line {record.get('iteration')}: selected pair "
                     "missing from candidates")


def summary_record(reports) -> dict:
    """Final line: the adopted candidate's trajectory and end-state scores."""
    if not reports:
        raise ValueError("cannot summarize an empty report trail")
    records = [r.as_record() if hasattr(r, "as_record") else r for r in reports]
    chosen = [_selected_scores(r) for r in records]
    final = chosen[-1]
    return {
        "summary": True,
        "iterations": len(records),
        "tm_trajectory": [c["tm_score"] for c in chosen],
        "final_selected": records[-1]["selected"],
        "final_task_acc": final["task_acc"],
        "final_mia_acc": final["mia_acc"],
        "final_tm_score": final["tm_score"],
        "total_epochs": records[-1]["cumulative_epochs"],
    }


def pretty_table(records: list[dict]) -> str:
    """Human-readable view of a report stream for the CLI."""
    lines = []
    header = (f"{'iter':>4}  {'selected':<20} {'task_acc':>8} {'mia_acc':>8} "
              f"{'tm_score':>8} {'epochs':>8}")
    lines.append(header)
    lines.append("-" * len(header))
    for rec in records:
        if rec.get("summary"):
            lines.append("-" * len(header))
            lines.append(
                f"summary: {rec['iterations']} iterations, "
                f"final tm_score {rec['final_tm_score']:.4f} "
                f"(task {rec['final_task_acc']:.4f}, "
                f"mia {rec['final_mia_acc']:.4f}) via {rec['final_selected']}")
            continue
        sel = _selected_scores(rec)
        lines.append(
            f"{rec['iteration']:>4}  {rec['selected']:<20} "
            f"{sel['task_acc']:>8.4f} {sel['mia_acc']:>8.4f} "
            f"{sel['tm_score']:>8.4f} {rec['cumulative_epochs']:>8.2f}")
    return "\n".join(lines)
