"""Command-line surface: simulate, fit, compare, report.

Every run writes its outputs plus one manifest.json recording input hashes,
the seed, the tool version and output hashes. Numbers in emitted files are
fixed at 6 significant digits so identical inputs give identical bytes.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .cohort import Cohort, IngestConfig, load_cohort
from .comparison import build_report
from .design import ModelFamily, ModelSpec, PriorTreatment, build_design, canonical_specs, split_term
from .effects import EffectTable, build_effect_table
from .errors import OutputError, ValidationError, VamError
from .estimation import FittedModel, fit_least_squares
from .figures import fmt, line_chart_svg, scatter_svg, stacked_bar_svg
from .simulation import SimConfig, generate_cohort, write_simulated_cohort

log = logging.getLogger("vam.cli")

_ADJACENT_PAIRS = [
    (ModelFamily.RAW, ModelFamily.VA),
    (ModelFamily.VA, ModelFamily.CVA_A),
    (ModelFamily.CVA_A, ModelFamily.CVA_B),
    (ModelFamily.CVA_B, ModelFamily.CVA_X),
]


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 0
    try:
        return args.handler(args)
    except VamError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


def _setup_logging() -> None:
    level = os.environ.get("VAM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vam",
        description="School value-added models: fit, compare, simulate, report.",
    )
    parser.set_defaults(command=None)
    sub = parser.add_subparsers(dest="command")

    def add_data_flags(p):
        p.add_argument("--students", required=True, help="students.csv path")
        p.add_argument("--schools", required=True, help="schools.csv path")
        p.add_argument("--config", help="TOML config file ([ingest]/[simulate] tables)")
        p.add_argument("--out", default="vam_out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for fitting")

    fit = sub.add_parser("fit", help="fit model variants and write per-model outputs")
    add_data_flags(fit)
    fit.add_argument("--model", default="all", choices=[f.value for f in ModelFamily] + ["all"])
    fit.add_argument("--prior", default=None, choices=[t.value for t in PriorTreatment])
    fit.add_argument("--dump-design", type=int, default=0, metavar="N", help="also dump column names and first N design rows")
    fit.set_defaults(handler=cmd_fit)

    compare = sub.add_parser("compare", help="fit the full grid and write comparison outputs")
    add_data_flags(compare)
    compare.set_defaults(handler=cmd_compare)

    report = sub.add_parser("report", help="per-model outputs plus comparison and figures")
    add_data_flags(report)
    report.set_defaults(handler=cmd_report)

    sim = sub.add_parser("simulate", help="generate synthetic cohorts in the ingest schema")
    sim.add_argument("--config", help="TOML config file with a [simulate] table")
    sim.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
    sim.add_argument("--seeds", help="inclusive seed range like 1..10 (one directory per seed)")
    sim.add_argument("--out", default="vam_out", help="output directory")
    sim.set_defaults(handler=cmd_simulate)
    return parser


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def requested_specs(model: str, prior: str | None) -> list[ModelSpec]:
    if model == "all":
        if prior is None:
            return canonical_specs()
        treatment = PriorTreatment(prior)
        return [ModelSpec(f, treatment) for f in ModelFamily]
    family = ModelFamily(model)
    treatment = PriorTreatment(prior) if prior else PriorTreatment.INCLUDED
    return [ModelSpec(family, treatment)]


def run_fits(cohort: Cohort, specs: list[ModelSpec], threads: int = 1) -> dict[ModelSpec, FittedModel]:
    """Fit each distinct design once; specs with column-identical designs
    share the fit object."""
    resolved = {spec: (spec.equivalent_spec() or spec) for spec in specs}
    distinct = sorted(set(resolved.values()), key=lambda s: (s.family.order, s.prior_treatment.value))
    outcome = cohort.students["outcome_std"].to_numpy()
    clusters = cohort.school_codes()

    def one(spec: ModelSpec) -> tuple[ModelSpec, FittedModel]:
        design = build_design(spec, cohort)
        fit = fit_least_squares(design, outcome, clusters=clusters, spec=spec)
        return spec, fit

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = dict(pool.map(one, distinct))
    else:
        fitted = dict(one(spec) for spec in distinct)
    return {spec: fitted[resolved[spec]] for spec in specs}


def effect_tables(cohort: Cohort, fits: dict[ModelSpec, FittedModel]) -> dict[ModelSpec, EffectTable]:
    school_ids = cohort.students["school_id"].to_numpy()
    cache: dict[ModelSpec, EffectTable] = {}
    out: dict[ModelSpec, EffectTable] = {}
    for spec, fit in fits.items():
        key = fit.spec if fit.spec is not None else spec
        if key not in cache:
            cache[key] = build_effect_table(fit, school_ids)
        out[spec] = dataclasses.replace(cache[key], spec=spec)
    return out


def _load_inputs(args) -> tuple[Cohort, IngestConfig]:
    config = IngestConfig.from_toml(args.config) if args.config else IngestConfig()
    cohort = load_cohort(args.students, args.schools, config)
    return cohort, config


# ---------------------------------------------------------------------------
# Commands


def cmd_fit(args) -> int:
    started = time.time()
    cohort, _ = _load_inputs(args)
    specs = requested_specs(args.model, args.prior)
    fits = run_fits(cohort, specs, threads=args.threads)
    tables = effect_tables(cohort, fits)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    for spec in specs:
        outputs.extend(
            _write_fit_outputs(outdir / spec.slug, spec, fits[spec], tables[spec], cohort, args.dump_design)
        )
    _write_manifest(outdir, "fit", args, outputs)
    log.info("fit finished in %.1fs", time.time() - started)
    return 0


def cmd_compare(args) -> int:
    cohort, _ = _load_inputs(args)
    specs = canonical_specs()
    fits = run_fits(cohort, specs, threads=args.threads)
    tables = effect_tables(cohort, fits)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = _write_comparison_outputs(outdir, cohort, tables)
    _write_manifest(outdir, "compare", args, outputs)
    return 0


def cmd_report(args) -> int:
    cohort, _ = _load_inputs(args)
    specs = canonical_specs()
    fits = run_fits(cohort, specs, threads=args.threads)
    tables = effect_tables(cohort, fits)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    for spec in specs:
        outputs.extend(_write_fit_outputs(outdir / spec.slug, spec, fits[spec], tables[spec], cohort, 0))
    outputs.extend(_write_comparison_outputs(outdir, cohort, tables))
    _write_manifest(outdir, "report", args, outputs)
    return 0


def cmd_simulate(args) -> int:
    base = SimConfig.from_toml(args.config) if args.config else SimConfig()
    seeds = _parse_seeds(args, default_seed=base.seed)
    outdir = Path(args.out)
    for seed in seeds:
        config = dataclasses.replace(base, seed=seed)
        cohort, truth = generate_cohort(config)
        target = outdir / f"seed_{seed:04d}" if len(seeds) > 1 else outdir
        paths = write_simulated_cohort(cohort, truth, target)
        _write_manifest(target, "simulate", args, [Path(p) for p in paths.values()], seed=seed)
        print(f"seed {seed}: {cohort.n_students} students in {cohort.n_schools} schools -> {target}")
    return 0


def _parse_seeds(args, default_seed: int) -> list[int]:
    if args.seeds:
        try:
            lo, hi = args.seeds.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        except ValueError as exc:
            raise ValidationError(f"--seeds expects LO..HI, got {args.seeds!r}") from exc
        if not seeds:
            raise ValidationError(f"--seeds range {args.seeds!r} is empty")
        return seeds
    if args.seed is not None:  # flag wins over the config file
        return [args.seed]
    return [default_seed]


# ---------------------------------------------------------------------------
# Writers


def _write_fit_outputs(outdir: Path, spec: ModelSpec, fit: FittedModel, table: EffectTable, cohort: Cohort, dump_design: int) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []

    effects = table.effects.copy()
    effects.insert(0, "model_label", spec.label)
    if "shrunk_effect" not in effects.columns:
        effects["shrunk_effect"] = np.nan
    effects = effects[
        ["model_label", "school_id", "n", "effect", "ci_low", "ci_high", "significant", "category", "shrunk_effect"]
    ]
    outputs.append(_write_csv(effects, outdir / "effects.csv"))

    ses = fit.standard_errors()
    rows = []
    for idx in fit.retained:
        term, level = split_term(fit.column_names[idx])
        rows.append(
            {
                "term": term,
                "level": level,
                "estimate": fit.coefficients[idx],
                "cluster_robust_se": ses[idx],
            }
        )
    outputs.append(_write_csv(pd.DataFrame(rows), outdir / "coefficients.csv"))

    equivalent = spec.equivalent_spec()
    summary = {
        "model": spec.label,
        "family": spec.family.value,
        "prior_treatment": spec.prior_treatment.value,
        "equivalent_to": equivalent.label if equivalent else None,
        "n_students": int(fit.n_obs),
        "n_schools": int(table.n_schools),
        "n_columns": len(fit.column_names),
        "rank": int(fit.rank),
        "dropped_columns": [list(item) for item in fit.dropped_columns],
        "Adjusted R-squared": fit.adjusted_r_squared,
        "SD of residuals": fit.residual_sd,
        "Variance of residuals": fit.residual_variance,
        "Variance of school effects": table.between_school_variance,
        "Variance of school effects (unweighted)": table.between_school_variance_unweighted,
        "% of residual variance due to schools": table.pct_of_residual_variance_due_to_schools,
        "% of schools statistically significant": table.pct_significant,
        "category_shares": table.category_shares,
    }
    outputs.append(_write_json(summary, outdir / "summary.json"))

    if dump_design:
        design = build_design(spec, cohort)
        outputs.append(_write_csv(design.head_frame(dump_design), outdir / "design_head.csv"))
    return outputs


def _write_comparison_outputs(outdir: Path, cohort: Cohort, tables: dict[ModelSpec, EffectTable]) -> list[Path]:
    keyed = {
        (spec.family.value, spec.prior_treatment.value): table
        for spec, table in tables.items()
    }
    report = build_report(keyed, cohort.schools)
    outputs = [_write_json(report.to_dict(), outdir / "report.json")]

    labels = report.model_labels
    matrix_rows = []
    for i, row_label in enumerate(labels):
        row = {"model": row_label}
        for j, col_label in enumerate(labels):
            if i == j:
                value = 1.0
            elif i > j:
                value = report.pearson_matrix[i, j]
            else:
                value = report.spearman_matrix[i, j]
            row[col_label] = value
        matrix_rows.append(row)
    outputs.append(_write_csv(pd.DataFrame(matrix_rows), outdir / "matrix.csv"))

    for fam_a, fam_b in _ADJACENT_PAIRS:
        slug = f"{fam_a.value.replace('-', '_')}_vs_{fam_b.value.replace('-', '_')}"
        pair = report.scatter_exports[slug]
        outputs.append(_write_csv(pair, outdir / f"scatter_{slug}.csv"))
        flags = pair["top_prior_ventile"].tolist()
        outputs.append(
            _write_text(
                scatter_svg(
                    pair["effect_a"], pair["effect_b"], flags,
                    title=f"School effects: {fam_a.display} vs {fam_b.display}",
                    x_label=fam_a.display, y_label=fam_b.display,
                ),
                outdir / f"figure_scatter_{slug}.svg",
            )
        )
        outputs.append(
            _write_text(
                scatter_svg(
                    pair["rank_a"], pair["rank_b"], flags,
                    title=f"School ranks: {fam_a.display} vs {fam_b.display}",
                    x_label=f"{fam_a.display} rank", y_label=f"{fam_b.display} rank",
                ),
                outdir / f"figure_rank_scatter_{slug}.svg",
            )
        )

    outputs.append(
        _write_text(
            stacked_bar_svg(labels, report.category_share_table),
            outdir / "figure_category_shares.svg",
        )
    )
    family_labels = [ModelFamily(f).display for f in report.families]
    outputs.append(
        _write_text(
            line_chart_svg(
                family_labels,
                report.moderate_or_large_line,
                title="Schools with moderate or large effects (%)",
                y_max=100.0,
            ),
            outdir / "figure_moderate_or_large.svg",
        )
    )
    outputs.append(
        _write_text(
            line_chart_svg(
                family_labels,
                report.correlation_to_original_line,
                title="Correlation with the prior-included variant",
                y_max=1.0,
            ),
            outdir / "figure_correlation_to_original.svg",
        )
    )
    return outputs


def _round6(value):
    if isinstance(value, dict):
        return {k: _round6(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round6(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        return float(fmt(value))
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def _write_json(payload: dict, path: Path) -> Path:
    try:
        path.write_text(json.dumps(_round6(payload), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _write_text(content: str, path: Path) -> Path:
    try:
        path.write_text(content + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _write_manifest(outdir: Path, command: str, args, outputs: list[Path], seed=None) -> Path:
    inputs = {}
    for attr in ("students", "schools", "config"):
        path = getattr(args, attr, None)
        if path:
            inputs[str(path)] = _sha256_file(Path(path))
    manifest = {
        "command": command,
        "argv": [a for a in sys.argv[1:]] if sys.argv else [],
        "tool_version": __version__,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "seed": seed if seed is not None else getattr(args, "seed", None),
        "input_hashes": inputs,
        "outputs": {
            str(p.relative_to(outdir)): _sha256_file(p) for p in sorted(set(outputs))
        },
    }
    path = outdir / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _sha256_file(path: Path) -> str:
    try:
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                digest.update(block)
        return digest.hexdigest()
    except OSError as exc:
        raise OutputError(f"cannot hash {path}: {exc}") from exc
