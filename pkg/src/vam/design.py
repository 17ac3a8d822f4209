"""The model grid and dummy-coded design matrices.

Five nested model families (raw, va, cva-a, cva-b, cva-x) crossed with four
treatments of the prior-achievement adjustment (included, omitted, early
substituted for prior, both entered together) give a 20-cell grid. The raw
family makes no adjustments at all, so its four cells share one design.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from .cohort import Cohort
from .errors import ValidationError

log = logging.getLogger("vam.design")


class ModelFamily(str, Enum):
    RAW = "raw"
    VA = "va"
    CVA_A = "cva-a"
    CVA_B = "cva-b"
    CVA_X = "cva-x"

    @property
    def display(self) -> str:
        return _FAMILY_DISPLAY[self]

    @property
    def order(self) -> int:
        return _FAMILY_ORDER.index(self)


class PriorTreatment(str, Enum):
    INCLUDED = "included"
    OMITTED = "omitted"
    EARLY = "early"
    BOTH = "both"


_FAMILY_ORDER = [
    ModelFamily.RAW,
    ModelFamily.VA,
    ModelFamily.CVA_A,
    ModelFamily.CVA_B,
    ModelFamily.CVA_X,
]
_TREATMENT_ORDER = [
    PriorTreatment.INCLUDED,
    PriorTreatment.OMITTED,
    PriorTreatment.EARLY,
    PriorTreatment.BOTH,
]
_FAMILY_DISPLAY = {
    ModelFamily.RAW: "Raw",
    ModelFamily.VA: "VA",
    ModelFamily.CVA_A: "CVA-A",
    ModelFamily.CVA_B: "CVA-B",
    ModelFamily.CVA_X: "CVA-X",
}

# Student sociodemographic blocks entered from cva-a upward; age stays numeric.
SOCIO_CATEGORICAL = ["gender", "ethnicity", "eal", "sen", "fsm", "deprivation_decile"]
# Non-malleable school characteristic blocks entered in cva-x.
SCHOOL_CHARACTERISTICS = [
    "region",
    "school_type",
    "admissions",
    "age_range",
    "gender_mix",
    "religious_denom",
    "school_deprivation_decile",
]


@dataclass(frozen=True)
class ModelSpec:
    family: ModelFamily
    prior_treatment: PriorTreatment = PriorTreatment.INCLUDED

    @property
    def label(self) -> str:
        return f"{self.family.display} ({self.prior_treatment.value})"

    @property
    def slug(self) -> str:
        return f"{self.family.value.replace('-', '_')}_{self.prior_treatment.value}"

    @property
    def design_key(self) -> tuple[str, str]:
        """Grid identity after collapsing the raw family (which ignores
        the prior treatment)."""
        if self.family is ModelFamily.RAW:
            return (self.family.value, PriorTreatment.INCLUDED.value)
        return (self.family.value, self.prior_treatment.value)

    @property
    def is_raw_alias(self) -> bool:
        return (
            self.family is ModelFamily.RAW
            and self.prior_treatment is not PriorTreatment.INCLUDED
        )

    def equivalent_spec(self) -> "ModelSpec | None":
        """The simpler spec whose design is column-identical, if any.

        Raw ignores the treatment; va with prior omitted has no adjustments
        left; cva-b with prior omitted loses its composition ventiles (they
        cannot be derived without an achievement measure) and reduces to
        cva-a.
        """
        if self.is_raw_alias:
            return ModelSpec(ModelFamily.RAW, PriorTreatment.INCLUDED)
        if self.prior_treatment is PriorTreatment.OMITTED:
            if self.family is ModelFamily.VA:
                return ModelSpec(ModelFamily.RAW, PriorTreatment.INCLUDED)
            if self.family is ModelFamily.CVA_B:
                return ModelSpec(ModelFamily.CVA_A, PriorTreatment.OMITTED)
        return None


def canonical_specs() -> list[ModelSpec]:
    """The full 20-cell grid in family-major order."""
    return [
        ModelSpec(family, treatment)
        for family in _FAMILY_ORDER
        for treatment in _TREATMENT_ORDER
    ]


@dataclass
class DesignMatrix:
    """Dense expanded design: intercept first, then dummy/numeric blocks."""

    values: np.ndarray
    column_names: list[str]
    term_map: dict[str, range]
    dropped_columns: list[tuple[str, str]] = field(default_factory=list)
    reference_levels: dict[str, object] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    def head_frame(self, n: int = 10) -> pd.DataFrame:
        return pd.DataFrame(self.values[:n], columns=self.column_names)


def build_design(spec: ModelSpec, cohort: Cohort) -> DesignMatrix:
    """Expand a (spec, cohort) pair into its dummy-coded matrix.

    Each categorical block omits its most frequent level (ties broken by
    the smaller level) as reference. Blocks with a single observed level
    contribute nothing and are recorded as dropped, not errors.
    """
    students = cohort.students
    if "mean_prior_ventile" not in students.columns:
        raise ValidationError("cohort is missing composition ventiles; derive first")
    fam = spec.family.order
    treatment = spec.prior_treatment

    # (term, student-level codes, levels) per categorical block; numeric
    # blocks carry the raw values with levels=None.
    blocks: list[tuple[str, np.ndarray, list | None]] = []
    if fam >= ModelFamily.VA.order:
        if treatment in (PriorTreatment.INCLUDED, PriorTreatment.BOTH):
            blocks.append(("ks2_band", *_student_codes(cohort, "prior_band")))
        if treatment in (PriorTreatment.EARLY, PriorTreatment.BOTH):
            blocks.append(("ks1_band", *_student_codes(cohort, "early_band")))
    if fam >= ModelFamily.CVA_A.order:
        blocks.append(("age", students["age"].to_numpy(dtype=float), None))
        for term in SOCIO_CATEGORICAL:
            blocks.append((term, *_student_codes(cohort, term)))
    if fam >= ModelFamily.CVA_B.order:
        if treatment in (PriorTreatment.INCLUDED, PriorTreatment.BOTH):
            blocks.append(
                ("school_mean_ks2_ventile", *_student_codes(cohort, "mean_prior_ventile"))
            )
        if treatment in (PriorTreatment.EARLY, PriorTreatment.BOTH):
            blocks.append(
                ("school_mean_ks1_ventile", *_student_codes(cohort, "mean_early_ventile"))
            )
    if fam >= ModelFamily.CVA_X.order:
        school_pos = cohort.school_codes()
        for term in SCHOOL_CHARACTERISTICS:
            cat = pd.Categorical(cohort.schools[term])
            blocks.append((term, np.asarray(cat.codes)[school_pos], list(cat.categories)))

    n = len(students)
    plan: list[tuple[str, str, np.ndarray | None, int]] = []  # name, term, codes, code
    term_map: dict[str, range] = {"intercept": range(0, 1)}
    dropped: list[tuple[str, str]] = []
    references: dict[str, object] = {}
    names: list[str] = ["intercept"]

    for term, data, levels in blocks:
        start = len(names)
        if levels is None:
            if data.min() == data.max():
                dropped.append((term, "constant column"))
                log.info("design %s: dropped constant numeric term %s", spec.slug, term)
                continue
            plan.append((term, term, data, -1))
            names.append(term)
        else:
            if len(levels) < 2:
                dropped.append((term, "single level"))
                log.info("design %s: dropped single-level block %s", spec.slug, term)
                continue
            counts = np.bincount(data, minlength=len(levels))
            ref_code = int(np.flatnonzero(counts == counts.max())[0])
            references[term] = levels[ref_code]
            for code, level in enumerate(levels):
                if code == ref_code:
                    continue
                name = f"{term}={_level_label(level)}"
                plan.append((name, term, data, code))
                names.append(name)
        if len(names) > start:
            term_map[term] = range(start, len(names))

    values = np.empty((n, len(names)))
    values[:, 0] = 1.0
    for j, (_, _, data, code) in enumerate(plan, start=1):
        if code < 0:
            values[:, j] = data
        else:
            values[:, j] = data == code
    return DesignMatrix(
        values=values,
        column_names=names,
        term_map=term_map,
        dropped_columns=dropped,
        reference_levels=references,
    )


_codes_cache: dict[int, dict] = {}


def _student_codes(cohort: Cohort, column: str) -> tuple[np.ndarray, list]:
    """Integer codes plus sorted levels for a student column, cached per
    student table (immutable by contract; entries die with the table)."""
    frame = cohort.students
    key = id(frame)
    per_frame = _codes_cache.get(key)
    if per_frame is None:
        per_frame = {}
        _codes_cache[key] = per_frame
        weakref.finalize(frame, _codes_cache.pop, key, None)
    if column not in per_frame:
        cat = pd.Categorical(frame[column])
        per_frame[column] = (np.asarray(cat.codes), list(cat.categories))
    return per_frame[column]


def _level_label(level) -> str:
    from .cohort import EARLY_MISSING  # local to avoid cycle at import time

    if isinstance(level, (int, np.integer)) and level == EARLY_MISSING:
        return "missing"
    return str(level)


def split_term(column_name: str) -> tuple[str, str]:
    """Column name -> (term, level); numeric terms get an empty level."""
    if "=" in column_name:
        term, level = column_name.split("=", 1)
        return term, level
    return column_name, ""
