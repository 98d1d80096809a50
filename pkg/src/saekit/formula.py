"""Minimal model-formula parsing for area-level regressions.

Supports ``response ~ a + b``, interaction ``a:b`` and crossing ``a*b``
(main effects plus interaction).  Every model carries an intercept;
``0``/``-1`` terms are rejected.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InputError

_NAME_RE = re.compile(r"[A-Za-z_]\w*")


@dataclass(frozen=True)
class Formula:
    response: str
    terms: tuple[tuple[str, ...], ...]
    text: str

    @property
    def n_params(self) -> int:
        return 1 + len(self.terms)  # intercept included

    def term_names(self) -> list[str]:
        return ["intercept"] + [":".join(t) for t in self.terms]


def _check_name(name: str, text: str) -> str:
    name = name.strip()
    if not _NAME_RE.fullmatch(name):
        raise InputError(f"formula '{text}': bad variable name '{name}'")
    return name


def parse_formula(text: str) -> Formula:
    if text.count("~") != 1:
        raise InputError(f"formula '{text}': expected exactly one '~'")
    lhs, rhs = (part.strip() for part in text.split("~"))
    response = _check_name(lhs, text)
    if "-" in rhs:
        raise InputError(f"formula '{text}': models are always fit with an intercept")

    terms: list[tuple[str, ...]] = []
    for chunk in rhs.split("+"):
        chunk = chunk.strip()
        if chunk == "0":
            raise InputError(f"formula '{text}': models are always fit with an intercept")
        if chunk == "" or chunk == "1":
            continue
        if "*" in chunk:
            factors = [_check_name(f, text) for f in chunk.split("*")]
            for size in range(1, len(factors) + 1):
                terms.extend(itertools.combinations(factors, size))
        elif ":" in chunk:
            terms.append(tuple(_check_name(f, text) for f in chunk.split(":")))
        else:
            terms.append((_check_name(chunk, text),))

    deduped: list[tuple[str, ...]] = []
    for term in terms:
        if term not in deduped:
            deduped.append(term)
    return Formula(response=response, terms=tuple(deduped), text=text)


def build_design(
    columns: Mapping[str, np.ndarray], formula: Formula
) -> tuple[np.ndarray, list[str]]:
    """Materialize the design matrix (leading intercept column) from named columns."""
    missing = sorted(
        {name for term in formula.terms for name in term if name not in columns}
    )
    if missing:
        raise InputError(
            f"formula '{formula.text}': missing columns: {', '.join(missing)}"
        )
    n = None
    cols: list[np.ndarray] = []
    for term in formula.terms:
        col = np.ones_like(np.asarray(columns[term[0]], dtype=float))
        for name in term:
            col = col * np.asarray(columns[name], dtype=float)
        n = col.shape[0]
        cols.append(col)
    if n is None:  # intercept-only model
        first = next(iter(columns.values()))
        n = np.asarray(first).shape[0]
    X = np.column_stack([np.ones(n)] + cols) if cols else np.ones((n, 1))
    return X, formula.term_names()
