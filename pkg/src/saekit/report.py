"""Side-by-side comparison of direct and model-based estimates.

The headline figure per domain is the relative reduction of the relative
standard error: ``delta = 100 * (eer_direct - eer_model) / eer_direct``
in percentage points of the direct EER.  Output formatting is fixed (two
decimals for currency and percentages), so identical inputs always render
byte-identical reports.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .direct import DomainDirectEstimate
from .errors import InputError
from .fayherriot import EblupResult

REPORT_COLUMNS = [
    "domain_id",
    "y_bar_hat",
    "eer_direct",
    "eblup",
    "eer_eblup",
    "delta",
    "n_sample",
]


@dataclass(frozen=True)
class ComparisonRow:
    """One domain's comparison; EER columns and delta are percentages."""

    domain_id: str
    y_bar_hat: float
    eer_direct: float
    eblup: float
    eer_eblup: float
    delta: float
    n_sample: int


def eer_reduction(eer_direct: float, eer_model: float) -> float:
    """Relative EER reduction as a fraction of the direct EER.

    Unit-invariant: both arguments may be fractions or percentages, as
    long as they agree.
    """
    if eer_direct <= 0 or not math.isfinite(eer_direct):
        raise ValueError("direct EER must be positive and finite")
    return (eer_direct - eer_model) / eer_direct


def compare(
    direct: Sequence[DomainDirectEstimate], model: EblupResult
) -> list[ComparisonRow]:
    """Join direct estimates with model predictions into comparison rows.

    Both sides must cover exactly the same domains; rows follow the order
    of the direct estimates.
    """
    if model.eer_eblup is None:
        raise InputError("model result has no MSE; run the MSE step first")
    direct_ids = [e.domain_id for e in direct]
    if sorted(direct_ids) != sorted(model.domain_ids):
        only_direct = set(direct_ids) - set(model.domain_ids)
        only_model = set(model.domain_ids) - set(direct_ids)
        raise InputError(
            "domain mismatch between direct and model results "
            f"(direct-only: {sorted(only_direct)}, model-only: {sorted(only_model)})"
        )
    index = {d: i for i, d in enumerate(model.domain_ids)}
    rows = []
    for est in direct:
        i = index[est.domain_id]
        rows.append(
            ComparisonRow(
                domain_id=est.domain_id,
                y_bar_hat=est.y_bar_hat,
                eer_direct=100.0 * est.eer,
                eblup=float(model.eblup[i]),
                eer_eblup=100.0 * float(model.eer_eblup[i]),
                delta=100.0 * eer_reduction(est.eer, float(model.eer_eblup[i])),
                n_sample=est.n_sample,
            )
        )
    return rows


def sort_by_delta(rows: Sequence[ComparisonRow]) -> list[ComparisonRow]:
    return sorted(rows, key=lambda r: r.delta, reverse=True)


def _formatted(row: ComparisonRow) -> list[str]:
    return [
        row.domain_id,
        f"{row.y_bar_hat:.2f}",
        f"{row.eer_direct:.2f}",
        f"{row.eblup:.2f}",
        f"{row.eer_eblup:.2f}",
        f"{row.delta:.2f}",
        str(row.n_sample),
    ]


def render_report(rows: Sequence[ComparisonRow], fmt: str = "csv") -> str:
    """Render comparison rows as csv, json, or a markdown table."""
    if not rows:
        raise InputError("no comparison rows to report")
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            buf.write(",".join(_formatted(row)) + "\n")
        return buf.getvalue()
    if fmt == "json":
        payload = [dict(zip(REPORT_COLUMNS, _formatted(row))) for row in rows]
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(REPORT_COLUMNS) + " |",
            "|" + "|".join(["---"] * len(REPORT_COLUMNS)) + "|",
        ]
        for row in rows:
            lines.append("| " + " | ".join(_formatted(row)) + " |")
        return "\n".join(lines) + "\n"
    raise InputError(f"unknown report format '{fmt}' (use csv, json, or markdown)")


def emit_report(
    rows: Sequence[ComparisonRow], path: str | Path, fmt: str | None = None
) -> Path:
    """Write the rendered report; the format defaults from the file suffix."""
    path = Path(path)
    if fmt is None:
        fmt = {".csv": "csv", ".json": "json", ".md": "markdown"}.get(
            path.suffix, "csv"
        )
    text = render_report(rows, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write report to {path}: {exc}") from None
    return path
