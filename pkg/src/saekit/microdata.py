"""Survey microdata ingestion and per-capita income construction.

A microdata file is comma-delimited UTF-8 with a header row declaring
``person_id, household_id, domain_id, weight`` plus one column per survey
income item (optionally ``perceptor_category``).  An item map assigns each
item code to one of five income components and a reference period; amounts
reported for the last twelve months are converted to monthly by a
configurable divisor.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import MicrodataError

RESERVED_COLUMNS = ("person_id", "household_id", "domain_id", "weight")
OPTIONAL_COLUMNS = ("perceptor_category",)


class Component(str, Enum):
    IMPA = "impa"  # monetary income, first activity
    IE = "ie"  # in-kind income
    ISA = "isa"  # second-activity income
    IMDI = "imdi"  # income of the unemployed and inactive
    IOF = "iof"  # income from other sources


class Period(str, Enum):
    MONTHLY = "monthly"
    LAST_12_MONTHS = "last_12_months"


class PerceptorCategory(str, Enum):
    SALARIED = "salaried"
    INDEPENDENT = "independent"
    UNPAID_FAMILY = "unpaid_family"
    UNEMPLOYED_OR_INACTIVE = "unemployed_or_inactive"


@dataclass(frozen=True)
class ItemRule:
    """Mapping of one survey item code to a component and period."""

    component: Component | None
    period: Period = Period.MONTHLY
    ignore: bool = False

    def __post_init__(self):
        if not self.ignore and self.component is None:
            raise MicrodataError("item rule needs a component unless marked ignored")


ItemMap = dict[str, ItemRule]


def default_item_map() -> ItemMap:
    """Item map for the standard labour-income question block (K30..K57).

    Monthly wage/profit questions and cash subsidies go to the
    first-activity component; the last-twelve-months bonus questions
    likewise.  Secondary jobs feed the second-activity component, and
    pensions, rents, transfers, asset sales and other windfalls feed the
    other-sources component.  In-kind income and the inactive-population
    component have no dedicated column in this block; map survey-specific
    columns onto them in a custom item map.
    """
    monthly_impa = ["K30", "K35", "K36", "K37", "K38", "K40"]
    yearly_impa = ["K39A", "K39B", "K39C", "K39D", "K39E"]
    monthly_iof = ["K51", "K52", "K53"]
    yearly_iof = ["K54", "K55", "K56", "K57"]
    item_map: ItemMap = {}
    for code in monthly_impa:
        item_map[code] = ItemRule(Component.IMPA, Period.MONTHLY)
    for code in yearly_impa:
        item_map[code] = ItemRule(Component.IMPA, Period.LAST_12_MONTHS)
    item_map["K46"] = ItemRule(Component.ISA, Period.MONTHLY)
    for code in monthly_iof:
        item_map[code] = ItemRule(Component.IOF, Period.MONTHLY)
    for code in yearly_iof:
        item_map[code] = ItemRule(Component.IOF, Period.LAST_12_MONTHS)
    return item_map


def load_item_map(path: str | Path) -> ItemMap:
    """Load an item map from JSON: ``{"K30": {"component": "impa", "period": "monthly"}}``.

    An entry with ``{"ignore": true}`` declares a column that is present in
    the file but excluded from income construction.
    """
    path = Path(path)
    if not path.exists():
        raise MicrodataError(f"item map not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MicrodataError(f"item map {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise MicrodataError(f"item map {path}: expected an object of item entries")
    item_map: ItemMap = {}
    for code, entry in raw.items():
        if not isinstance(entry, dict):
            raise MicrodataError(f"item map {path}: entry for '{code}' must be an object")
        if entry.get("ignore", False):
            item_map[code] = ItemRule(component=None, ignore=True)
            continue
        try:
            component = Component(entry["component"])
            period = Period(entry.get("period", "monthly"))
        except (KeyError, ValueError) as exc:
            raise MicrodataError(f"item map {path}: bad entry for '{code}': {exc}") from None
        item_map[code] = ItemRule(component=component, period=period)
    return item_map


@dataclass(frozen=True)
class RawItem:
    amount: float | None  # None = respondent did not report
    period: Period


@dataclass(frozen=True)
class PersonIncomeRecord:
    person_id: str
    household_id: str
    domain_id: str
    weight: float
    perceptor_category: PerceptorCategory | None
    raw_items: Mapping[str, RawItem] = field(default_factory=dict)


@dataclass(frozen=True)
class IncomeComponents:
    """Monthly income of one person split over the five component sources.

    ``incomplete`` names the components that had at least one missing item
    (missing items contribute zero rather than being imputed).
    """

    impa: float = 0.0
    ie: float = 0.0
    isa: float = 0.0
    imdi: float = 0.0
    iof: float = 0.0
    incomplete: frozenset[str] = frozenset()

    def __post_init__(self):
        for name in ("impa", "ie", "isa", "imdi", "iof"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"component {name} must be non-negative")

    def total(self) -> float:
        return self.impa + self.ie + self.isa + self.imdi + self.iof


@dataclass(frozen=True)
class HouseholdIncome:
    household_id: str
    domain_id: str
    weight: float
    member_count: int
    total_income: float

    @property
    def per_capita_income(self) -> float:
        return self.total_income / self.member_count


def load_microdata(
    path: str | Path, item_map: ItemMap | None = None
) -> list[PersonIncomeRecord]:
    """Load person-level microdata; one record per data row.

    Validations: every item column must appear in the item map (or be
    marked ignored), weights must be positive, person ids unique, amounts
    non-negative.  Blank amount cells become missing, not zero.  Errors
    name the offending data row ('row 1' is the first row after the
    header) and column.
    """
    if item_map is None:
        item_map = default_item_map()
    path = Path(path)
    if not path.exists():
        raise MicrodataError(f"microdata file not found: {path}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MicrodataError(f"{path}: empty file") from None

        missing = [c for c in RESERVED_COLUMNS if c not in header]
        if missing:
            raise MicrodataError(f"{path}: missing required columns: {', '.join(missing)}")
        item_columns = [
            c for c in header if c not in RESERVED_COLUMNS and c not in OPTIONAL_COLUMNS
        ]
        unknown = [c for c in item_columns if c not in item_map]
        if unknown:
            raise MicrodataError(
                f"{path}: item columns not in the item map: {', '.join(unknown)}"
            )
        item_columns = [c for c in item_columns if not item_map[c].ignore]
        col_index = {name: i for i, name in enumerate(header)}

        records: list[PersonIncomeRecord] = []
        seen_ids: set[str] = set()
        for rownum, parts in enumerate(reader, start=1):
            if not parts or all(p.strip() == "" for p in parts):
                continue
            if len(parts) != len(header):
                raise MicrodataError(
                    f"{path}: row {rownum}: {len(parts)} fields, expected {len(header)}"
                )
            cell = lambda name: parts[col_index[name]].strip()

            person_id = cell("person_id")
            if not person_id:
                raise MicrodataError(f"{path}: row {rownum}: empty person_id")
            if person_id in seen_ids:
                raise MicrodataError(f"{path}: row {rownum}: duplicate person_id '{person_id}'")
            seen_ids.add(person_id)

            try:
                weight = float(cell("weight"))
            except ValueError:
                raise MicrodataError(
                    f"{path}: row {rownum}: column weight: cannot parse "
                    f"'{cell('weight')}'"
                ) from None
            if not math.isfinite(weight) or weight <= 0.0:
                raise MicrodataError(
                    f"{path}: row {rownum}: column weight: must be > 0, got {cell('weight')}"
                )

            category: PerceptorCategory | None = None
            if "perceptor_category" in col_index and cell("perceptor_category"):
                try:
                    category = PerceptorCategory(cell("perceptor_category"))
                except ValueError:
                    raise MicrodataError(
                        f"{path}: row {rownum}: column perceptor_category: "
                        f"unknown value '{cell('perceptor_category')}'"
                    ) from None

            raw_items: dict[str, RawItem] = {}
            for code in item_columns:
                text = cell(code)
                rule = item_map[code]
                if text == "" or text.upper() in ("NA", "NAN"):
                    raw_items[code] = RawItem(amount=None, period=rule.period)
                    continue
                try:
                    amount = float(text)
                except ValueError:
                    raise MicrodataError(
                        f"{path}: row {rownum}: column {code}: cannot parse '{text}'"
                    ) from None
                if not math.isfinite(amount) or amount < 0.0:
                    raise MicrodataError(
                        f"{path}: row {rownum}: column {code}: amount must be "
                        f"non-negative, got {text}"
                    )
                raw_items[code] = RawItem(amount=amount, period=rule.period)

            records.append(
                PersonIncomeRecord(
                    person_id=person_id,
                    household_id=cell("household_id"),
                    domain_id=cell("domain_id"),
                    weight=weight,
                    perceptor_category=category,
                    raw_items=raw_items,
                )
            )
    return records


def build_income(
    record: PersonIncomeRecord,
    item_map: ItemMap | None = None,
    annualization_divisor: float = 12.0,
) -> IncomeComponents:
    """Assemble one person's monthly income components from raw items.

    Monthly items are summed as-is; last-twelve-months items are divided
    by ``annualization_divisor`` first.  Missing items contribute zero and
    flag their component as incomplete.
    """
    if item_map is None:
        item_map = default_item_map()
    if annualization_divisor <= 0.0:
        raise ValueError("annualization_divisor must be positive")
    sums = {c: 0.0 for c in Component}
    incomplete: set[str] = set()
    for code, item in record.raw_items.items():
        rule = item_map.get(code)
        if rule is None:
            raise MicrodataError(f"item '{code}' missing from the item map")
        if rule.ignore:
            continue
        if item.amount is None:
            incomplete.add(rule.component.value)
            continue
        amount = item.amount
        if item.period is Period.LAST_12_MONTHS:
            amount /= annualization_divisor
        sums[rule.component] += amount
    return IncomeComponents(
        impa=sums[Component.IMPA],
        ie=sums[Component.IE],
        isa=sums[Component.ISA],
        imdi=sums[Component.IMDI],
        iof=sums[Component.IOF],
        incomplete=frozenset(incomplete),
    )


def aggregate_household(
    records: Sequence[PersonIncomeRecord],
    item_map: ItemMap | None = None,
    annualization_divisor: float = 12.0,
) -> HouseholdIncome:
    """Sum member incomes into a household total and per-capita value.

    All member records must agree on household id, domain and weight (the
    expansion factor lives at household level).
    """
    if not records:
        raise ValueError("no records for household")
    first = records[0]
    for rec in records[1:]:
        if rec.household_id != first.household_id:
            raise MicrodataError("records belong to different households")
        if rec.domain_id != first.domain_id:
            raise MicrodataError(
                f"household {first.household_id}: inconsistent domain_id "
                f"({first.domain_id} vs {rec.domain_id})"
            )
        if rec.weight != first.weight:
            raise MicrodataError(
                f"household {first.household_id}: inconsistent weight "
                f"({first.weight} vs {rec.weight})"
            )
    total = math.fsum(
        build_income(rec, item_map, annualization_divisor).total() for rec in records
    )
    return HouseholdIncome(
        household_id=first.household_id,
        domain_id=first.domain_id,
        weight=first.weight,
        member_count=len(records),
        total_income=total,
    )


def households_from_records(
    records: Iterable[PersonIncomeRecord],
    item_map: ItemMap | None = None,
    annualization_divisor: float = 12.0,
) -> list[HouseholdIncome]:
    """Group person records by household and aggregate each one.

    Output order follows first appearance of each household, so permuting
    input rows never changes any household's values.
    """
    grouped: dict[str, list[PersonIncomeRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.household_id, []).append(rec)
    return [
        aggregate_household(members, item_map, annualization_divisor)
        for members in grouped.values()
    ]


def analysis_units(
    households: Iterable[HouseholdIncome], unit: str = "household"
) -> list[tuple[str, float, float]]:
    """Expand households into (domain_id, weight, per-capita income) units.

    ``unit='household'`` yields one unit per household; ``unit='person'``
    replicates the household weight and per-capita value once per member,
    for person-level sensitivity analysis.
    """
    if unit not in ("household", "person"):
        raise ValueError("unit must be 'household' or 'person'")
    out: list[tuple[str, float, float]] = []
    for hh in households:
        reps = hh.member_count if unit == "person" else 1
        out.extend([(hh.domain_id, hh.weight, hh.per_capita_income)] * reps)
    return out
