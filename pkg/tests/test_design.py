import numpy as np
import pytest

from vam import (
    IngestConfig,
    ModelFamily,
    ModelSpec,
    PriorTreatment,
    ValidationError,
    build_design,
    canonical_specs,
    fit_least_squares,
)
from vam.cohort import build_cohort
from vam.design import split_term

from conftest import school_row, student_row
import pandas as pd


FAMILIES = list(ModelFamily)
TREATMENTS = list(PriorTreatment)


class TestCanonicalSpecs:
    def test_grid_size_and_distinct_keys(self):
        specs = canonical_specs()
        assert len(specs) == 20
        assert len({s.design_key for s in specs}) == 17  # the raw family collapses

    def test_raw_variants_flagged_equivalent(self):
        specs = canonical_specs()
        aliases = [s for s in specs if s.is_raw_alias]
        assert len(aliases) == 3
        for spec in aliases:
            assert spec.equivalent_spec() == ModelSpec(ModelFamily.RAW, PriorTreatment.INCLUDED)

    def test_family_filter(self):
        va = [s for s in canonical_specs() if s.family is ModelFamily.VA]
        assert len(va) == 4

    def test_treatment_filter_gives_original_five(self):
        included = [s for s in canonical_specs() if s.prior_treatment is PriorTreatment.INCLUDED]
        assert [s.family for s in included] == FAMILIES

    def test_labels_unique(self):
        labels = [s.label for s in canonical_specs()]
        assert len(set(labels)) == 20


class TestBuildDesign:
    def test_raw_is_intercept_only(self, small_cohort):
        cohort, _ = small_cohort
        for treatment in TREATMENTS:
            design = build_design(ModelSpec(ModelFamily.RAW, treatment), cohort)
            assert design.column_names == ["intercept"]
            assert (design.values == 1.0).all()

    def test_va_included_uses_all_bands(self, midsize_cohort):
        cohort, _ = midsize_cohort
        assert cohort.students["prior_band"].nunique() == 34
        design = build_design(ModelSpec(ModelFamily.VA, PriorTreatment.INCLUDED), cohort)
        assert design.n_columns == 34  # intercept + 33 dummies

    def test_va_early_column_count(self, midsize_cohort):
        cohort, _ = midsize_cohort
        assert (cohort.students["early_band"] == 0).any()
        assert cohort.students["early_band"].nunique() == 21  # 20 bands + missing
        design = build_design(ModelSpec(ModelFamily.VA, PriorTreatment.EARLY), cohort)
        assert design.n_columns == 21  # intercept + (21 levels - reference)
        assert any(name == "ks1_band=missing" for name in design.column_names)

    def test_va_omitted_equals_raw(self, small_cohort):
        cohort, _ = small_cohort
        spec = ModelSpec(ModelFamily.VA, PriorTreatment.OMITTED)
        design = build_design(spec, cohort)
        assert design.column_names == ["intercept"]
        assert spec.equivalent_spec() == ModelSpec(ModelFamily.RAW, PriorTreatment.INCLUDED)

    def test_cva_b_omitted_equals_cva_a(self, small_cohort):
        cohort, _ = small_cohort
        design_b = build_design(ModelSpec(ModelFamily.CVA_B, PriorTreatment.OMITTED), cohort)
        design_a = build_design(ModelSpec(ModelFamily.CVA_A, PriorTreatment.OMITTED), cohort)
        assert design_b.column_names == design_a.column_names
        assert ModelSpec(ModelFamily.CVA_B, PriorTreatment.OMITTED).equivalent_spec() == ModelSpec(
            ModelFamily.CVA_A, PriorTreatment.OMITTED
        )

    def test_cva_b_ventile_blocks_match_treatment(self, small_cohort):
        cohort, _ = small_cohort
        spec = ModelSpec(ModelFamily.CVA_B, PriorTreatment.INCLUDED)
        names = build_design(spec, cohort).column_names
        assert any(n.startswith("school_mean_ks2_ventile=") for n in names)
        assert not any(n.startswith("school_mean_ks1_ventile=") for n in names)
        spec = ModelSpec(ModelFamily.CVA_B, PriorTreatment.EARLY)
        names = build_design(spec, cohort).column_names
        assert any(n.startswith("school_mean_ks1_ventile=") for n in names)
        assert not any(n.startswith("school_mean_ks2_ventile=") for n in names)
        spec = ModelSpec(ModelFamily.CVA_B, PriorTreatment.BOTH)
        names = build_design(spec, cohort).column_names
        assert any(n.startswith("school_mean_ks1_ventile=") for n in names)
        assert any(n.startswith("school_mean_ks2_ventile=") for n in names)

    def test_nesting_within_treatment(self, small_cohort):
        cohort, _ = small_cohort
        for treatment in TREATMENTS:
            previous: set = set()
            for family in FAMILIES:
                names = set(build_design(ModelSpec(family, treatment), cohort).column_names)
                assert previous <= names
                previous = names

    def test_first_column_is_intercept_and_rows_match(self, small_cohort):
        cohort, _ = small_cohort
        design = build_design(ModelSpec(ModelFamily.CVA_X, PriorTreatment.BOTH), cohort)
        assert design.column_names[0] == "intercept"
        assert (design.values[:, 0] == 1.0).all()
        assert design.n_rows == cohort.n_students

    def test_each_block_omits_one_reference_level(self, small_cohort):
        cohort, _ = small_cohort
        design = build_design(ModelSpec(ModelFamily.CVA_A, PriorTreatment.INCLUDED), cohort)
        gender_cols = [n for n in design.column_names if n.startswith("gender=")]
        levels = cohort.students["gender"].nunique()
        assert len(gender_cols) == levels - 1
        ref = design.reference_levels["gender"]
        assert f"gender={ref}" not in design.column_names

    def test_pure_function(self, small_cohort):
        cohort, _ = small_cohort
        spec = ModelSpec(ModelFamily.CVA_B, PriorTreatment.BOTH)
        a = build_design(spec, cohort)
        b = build_design(spec, cohort)
        assert a.column_names == b.column_names
        assert np.array_equal(a.values, b.values)

    def test_term_map_covers_columns(self, small_cohort):
        cohort, _ = small_cohort
        design = build_design(ModelSpec(ModelFamily.CVA_X, PriorTreatment.BOTH), cohort)
        covered = sorted(i for rng in design.term_map.values() for i in rng)
        assert covered == list(range(design.n_columns))

    def test_reference_choice_does_not_change_residuals(self, small_cohort):
        cohort, _ = small_cohort
        design = build_design(ModelSpec(ModelFamily.CVA_A, PriorTreatment.OMITTED), cohort)
        y = cohort.students["outcome_std"].to_numpy()
        base = fit_least_squares(design, y)

        # rebuild the gender block with the other level as reference
        idx = list(design.term_map["gender"])
        assert len(idx) == 1
        col = idx[0]
        name = design.column_names[col]
        other_level = split_term(name)[1]
        ref_level = str(design.reference_levels["gender"])
        swapped = design.values.copy()
        swapped[:, col] = 1.0 - swapped[:, col]
        design.values = swapped
        design.column_names[col] = f"gender={ref_level}"
        refit = fit_least_squares(design, y)
        assert other_level != ref_level
        np.testing.assert_allclose(refit.residuals, base.residuals, atol=1e-10)

    def test_single_level_block_dropped_with_record(self):
        students = pd.DataFrame(
            [student_row(i, f"S{i % 2}", ks2=float(i), outcome=float(i * 2 % 5), ks1=float(i % 4), gender="F")
             for i in range(12)]
        )
        schools = pd.DataFrame([school_row("S0"), school_row("S1")])
        config = IngestConfig(n_prior_bands=3, n_early_bands=2, n_composition_ventiles=2)
        cohort = build_cohort(students, schools, config)
        design = build_design(ModelSpec(ModelFamily.CVA_A, PriorTreatment.OMITTED), cohort)
        assert ("gender", "single level") in design.dropped_columns
        assert not any(n.startswith("gender=") for n in design.column_names)

    def test_missing_composition_rejected(self, small_cohort):
        cohort, _ = small_cohort
        stripped = cohort.students.drop(columns=["mean_prior_ventile", "mean_early_ventile"])
        from vam import Cohort

        broken = Cohort(students=stripped, schools=cohort.schools, band_cuts=cohort.band_cuts)
        with pytest.raises(ValidationError):
            build_design(ModelSpec(ModelFamily.CVA_B, PriorTreatment.INCLUDED), broken)
