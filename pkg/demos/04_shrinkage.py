"""Interval width and shrinkage both depend on school size.

Small schools get wide intervals and their mean residuals are pulled
hard toward zero by the empirical-Bayes factor
lambda = s2_between / (s2_between + s2_within / n).
"""

import numpy as np

from vam import (
    ModelFamily,
    ModelSpec,
    PriorTreatment,
    build_design,
    build_effect_table,
    estimate_variance_components,
    fit_least_squares,
    generate_cohort,
    SimConfig,
)

config = SimConfig(
    n_schools=250,
    students_min=10,
    students_max=400,
    sigma2_u_true=0.06,
    sorting_strength=0.35,
    seed=23,
)
cohort, truth = generate_cohort(config)
outcome = cohort.students["outcome_std"].to_numpy()
school_ids = cohort.students["school_id"].to_numpy()

spec = ModelSpec(ModelFamily.VA, PriorTreatment.INCLUDED)
fit = fit_least_squares(build_design(spec, cohort), outcome, spec=spec)
components = estimate_variance_components(fit.residuals, school_ids)
print(f"variance components: between {components['sigma2_u']:.4f}, within {components['sigma2_e']:.4f}")
print(f"(generator used between {truth.sigma2_u:.4f} on the standardized scale)\n")

table = build_effect_table(fit, school_ids)
frame = table.effects.copy()
frame["ci_width"] = frame["ci_high"] - frame["ci_low"]
frame["lambda"] = frame["shrunk_effect"] / frame["effect"].where(frame["effect"] != 0, 1.0)
frame["pulled"] = (frame["effect"] - frame["shrunk_effect"]).abs()

frame["size_band"] = np.digitize(frame["n"], [25, 50, 100, 200])
labels = {0: "<25", 1: "25-49", 2: "50-99", 3: "100-199", 4: ">=200"}
print(f"{'school size':12s} {'schools':>8s} {'mean CI width':>14s} {'mean lambda':>12s} {'mean |pull|':>12s}")
for band, group in frame.groupby("size_band"):
    print(
        f"{labels[band]:12s} {len(group):8d} {group['ci_width'].mean():14.3f} "
        f"{group['lambda'].mean():12.3f} {group['pulled'].mean():12.4f}"
    )

significant = frame["significant"].mean() * 100
print(f"\n{significant:.1f}% of schools have intervals excluding zero.")
biggest_move = frame.nlargest(3, "pulled")[["school_id", "n", "effect", "shrunk_effect"]]
print("\nschools pulled hardest toward zero:")
print(biggest_move.to_string(index=False))
