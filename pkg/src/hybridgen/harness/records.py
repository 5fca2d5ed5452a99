"""Run records on disk and the method-comparison table.

A run directory holds ``trajectory.jsonl`` (one JSON object per outer step),
``summary.json`` and ``config.yaml``.  The summary must agree with the
trajectory; :func:`load_record` checks this.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

from .config import ExperimentConfig, dump_config, parse_config

CSV_COLUMNS = ("method", "step", "generator_calls", "sgd_steps", "wall_ms", "L")


class RecordError(ValueError):
    pass


def version_stamp() -> str:
    try:
        return f"artifact {metadata.version('artifact')}"
    except metadata.PackageNotFoundError:  # running from a source tree
        return "artifact (unknown version)"


def summarize(trajectory: list[dict], method: str, wall_ms: float | None = None) -> dict:
    if not trajectory:
        raise RecordError("empty trajectory")
    best = min(trajectory, key=lambda r: r["L"])
    last = trajectory[-1]
    return {
        "method": method,
        "steps": len(trajectory),
        "best_L": best["L"],
        "best_t": best["t"],
        "final_L": last["L"],
        "generator_calls": last["generator_calls"],
        "sgd_steps": last["sgd_steps"],
        "wall_ms": last["wall_ms"] if wall_ms is None else wall_ms,
    }


@dataclass
class RunRecord:
    trajectory: list[dict]
    summary: dict
    config: ExperimentConfig
    version: str

    @property
    def method(self) -> str:
        return self.summary["method"]

    def losses(self) -> list[float]:
        return [r["L"] for r in self.trajectory]


def trajectory_lines(trajectory: list[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trajectory)


def write_record(directory: str | Path, trajectory: list[dict], config: ExperimentConfig,
                 wall_ms: float | None = None) -> RunRecord:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = summarize(trajectory, config.method, wall_ms)
    summary["version"] = version_stamp()
    (directory / "trajectory.jsonl").write_text(trajectory_lines(trajectory))
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (directory / "config.yaml").write_text(dump_config(config))
    return RunRecord(trajectory, summary, config, summary["version"])


def load_record(directory: str | Path) -> RunRecord:
    import yaml

    directory = Path(directory)
    try:
        lines = (directory / "trajectory.jsonl").read_text().splitlines()
        trajectory = [json.loads(line) for line in lines if line.strip()]
        summary = json.loads((directory / "summary.json").read_text())
        config = parse_config(yaml.safe_load((directory / "config.yaml").read_text()))
    except FileNotFoundError as exc:
        raise RecordError(f"{directory}: missing {Path(exc.filename).name}") from None
    except (json.JSONDecodeError, ValueError) as exc:
        raise RecordError(f"{directory}: malformed record: {exc}") from None
    for k, rec in enumerate(trajectory):
        missing = {"t", "L", "beta", "generator_calls", "sgd_steps", "wall_ms"} - rec.keys()
        if missing:
            raise RecordError(f"{directory}: trajectory line {k + 1} lacks {sorted(missing)}")
    expected = summarize(trajectory, summary.get("method", config.method), summary.get("wall_ms"))
    for key, value in expected.items():
        if summary.get(key) != value:
            raise RecordError(f"{directory}: summary field {key!r} disagrees with the trajectory")
    return RunRecord(trajectory, summary, config, summary.get("version", ""))


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def comparison_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    for record in records:
        for rec in record.trajectory:
            rows.append({
                "method": rec.get("method", record.method),
                "step": rec["t"],
                "generator_calls": rec["generator_calls"],
                "sgd_steps": rec["sgd_steps"],
                "wall_ms": rec["wall_ms"],
                "L": rec["L"],
            })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def csv_to_rows(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise RecordError(f"unexpected CSV columns {reader.fieldnames}")
    out = []
    for row in reader:
        out.append({
            "method": row["method"],
            "step": int(row["step"]),
            "generator_calls": int(row["generator_calls"]),
            "sgd_steps": int(row["sgd_steps"]),
            "wall_ms": float(row["wall_ms"]),
            "L": float(row["L"]),
        })
    return out


def smoothed(losses: list[float], window: int = 1) -> list[float]:
    """Trailing mean over up to ``window`` records."""
    if window < 1:
        raise ValueError("window must be positive")
    out, total = [], 0.0
    for k, value in enumerate(losses):
        total += value
        if k >= window:
            total -= losses[k - window]
        out.append(total / min(k + 1, window))
    return out


def first_reaching(record: RunRecord, target: float, window: int = 1) -> dict | None:
    """Counters at the first record whose trailing-mean loss is at most
    ``target``; ``None`` if never reached."""
    for rec, value in zip(record.trajectory, smoothed(record.losses(), window)):
        if value <= target:
            return {"step": rec["t"], "generator_calls": rec["generator_calls"],
                    "sgd_steps": rec["sgd_steps"], "wall_ms": rec["wall_ms"], "L": value}
    return None


def target_table(records: list[RunRecord], target: float, window: int = 1) -> list[dict]:
    """Evaluations needed by each run to reach ``target``, ordered by
    generator calls (runs that never reach it come last)."""
    table = []
    for record in records:
        hit = first_reaching(record, target, window)
        table.append({
            "method": record.method,
            "seed": record.config.seed,
            "reached": hit is not None,
            "step": hit["step"] if hit else None,
            "generator_calls": hit["generator_calls"] if hit else math.inf,
            "sgd_steps": hit["sgd_steps"] if hit else math.inf,
            "wall_ms": hit["wall_ms"] if hit else math.inf,
        })
    table.sort(key=lambda r: (r["generator_calls"], r["sgd_steps"]))
    return table


def format_table(table: list[dict], target: float) -> str:
    lines = [f"target L <= {target:g}", f"{'method':<12}{'seed':>6}{'step':>8}{'gen_calls':>12}{'sgd_steps':>12}"]
    for row in table:
        if row["reached"]:
            lines.append(f"{row['method']:<12}{row['seed']:>6}{row['step']:>8}"
                         f"{row['generator_calls']:>12}{row['sgd_steps']:>12}")
        else:
            lines.append(f"{row['method']:<12}{row['seed']:>6}{'never':>8}{'-':>12}{'-':>12}")
    if table and table[0]["reached"]:
        lines.append(f"first to reach: {table[0]['method']} (seed {table[0]['seed']})")
    else:
        lines.append("no run reached the target")
    return "\n".join(lines) + "\n"
