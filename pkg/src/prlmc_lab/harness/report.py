"""Experiment reports: verdicts, CSV tables and a JSON summary.

Floats are written with 17 significant digits in CSV and with Python's
shortest round-trip representation in JSON, so both reload bit-exactly. The
wall-clock timestamp lives in a separate ``run_info.json`` so that
``summary.json`` and the CSV tables are byte-identical across reruns.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from ..metrics import write_batch

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_CONFIG = 0, 1, 2, 3


@dataclass
class Verdict:
    """One pass/fail check.

    ``reference`` names the bound or identity being tested, ``estimate`` and
    ``se`` are the empirical side and ``bound`` the comparison value.
    """

    name: str
    status: str
    estimate: Optional[float] = None
    se: Optional[float] = None
    bound: Optional[float] = None
    reference: str = ""
    detail: str = ""


def one_sided(name, estimate, se, bound, reference, margin=3.0, detail="") -> Verdict:
    """Pass when ``estimate <= bound + margin * se``."""
    ok = estimate <= bound + margin * se
    return Verdict(name, PASS if ok else FAIL, float(estimate), float(se), float(bound),
                   reference, detail)


def within(name, estimate, se, target, reference, margin=3.0, detail="") -> Verdict:
    """Pass when ``|estimate - target| <= margin * se``."""
    ok = abs(estimate - target) <= margin * se
    return Verdict(name, PASS if ok else FAIL, float(estimate), float(se), float(target),
                   reference, detail)


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


@dataclass
class Report:
    experiment: str
    config: dict
    tables: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    theory: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    batches: dict = field(default_factory=dict)

    def add_row(self, table: str, row: dict) -> None:
        self.tables.setdefault(table, []).append(row)

    def add(self, verdict: Verdict) -> Verdict:
        self.verdicts.append(verdict)
        return verdict

    @property
    def status(self) -> str:
        states = [v.status for v in self.verdicts]
        if FAIL in states:
            return FAIL
        if INCONCLUSIVE in states or not states:
            return INCONCLUSIVE
        return PASS

    def exit_code(self) -> int:
        return {PASS: EXIT_PASS, FAIL: EXIT_FAIL, INCONCLUSIVE: EXIT_INCONCLUSIVE}[self.status]

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return _clean({
            "experiment": self.experiment,
            "status": self.status,
            "config": self.config,
            "theory": self.theory,
            "summary": self.summary,
            "verdicts": [asdict(v) for v in self.verdicts],
            "notes": self.notes,
        })

    def write(self, out_dir) -> Path:
        """Write ``summary.json``, CSV tables, raw batches and ``run_info.json``."""
        target = Path(out_dir) / self.experiment
        target.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"
        (target / "summary.json").write_text(text)
        for name, rows in self.tables.items():
            write_table(target / f"{name}.csv", rows)
        write_table(target / "verdicts.csv", [asdict(v) for v in self.verdicts])
        for name, samples in self.batches.items():
            write_batch(target / f"{name}.bin", samples)
        info = {"written_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
        (target / "run_info.json").write_text(json.dumps(info) + "\n")
        return target

    def lines(self) -> list:
        out = []
        for v in self.verdicts:
            parts = [f"[{v.status.upper()}] {v.name}"]
            if v.estimate is not None:
                parts.append(f"estimate={v.estimate:.6g}")
            if v.se is not None:
                parts.append(f"se={v.se:.3g}")
            if v.bound is not None:
                parts.append(f"bound={v.bound:.6g}")
            if v.reference:
                parts.append(f"ref={v.reference}")
            if v.detail:
                parts.append(v.detail)
            out.append(" ".join(parts))
        return out


def write_table(path, rows: list) -> None:
    columns = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
