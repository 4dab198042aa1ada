"""Command-line entry point: ``flatrec {transform,analyze,evaluate,grid-search,report}``.

Settings resolve as command-line flag > ``FLATREC_SEED`` (seed only) >
``--config`` file > built-in default.  The config file holds ``key = value``
lines using the long option names (dashes or underscores).
"""

from __future__ import annotations

import argparse
import configparser
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .data import DataError, Dataset, RatingScale, load_ratings
from .distmetrics import DistributionError, analyze
from .evaluation import Condition, EvaluationError, compare_inputs, expand_grid, full_grid, run_experiment
from .recsys import ConfigError, ModelConfig
from .transform import TransformError, TransformSpec, apply_transform, format_matrix, standard_inputs

_logger = logging.getLogger("flatrec")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2

DEFAULTS = {
    "format": None,
    "scale": None,
    "header": False,
    "spec": None,
    "output_dir": ".",
    "seed": 0,
    "folds": 5,
    "list_size": 10,
    "algorithm": "biasedmf",
    "factors": 10,
    "iterations": 30,
    "learning_rate": 0.01,
    "reg_bias": 0.01,
    "reg_factors": 0.01,
    "neighbors": 50,
    "grid": None,
    "jobs": 1,
    "long_tail_cut": 0.2,
    "relevance_threshold": None,
    "kurtosis": "raw",
    "census_min_ratings": 1,
    "deterministic": False,
    "stratified": False,
    "keep_positions": False,
}
_INT_KEYS = {"seed", "folds", "list_size", "factors", "iterations", "neighbors", "jobs", "census_min_ratings"}
_FLOAT_KEYS = {"learning_rate", "reg_bias", "reg_factors", "long_tail_cut", "relevance_threshold"}
_BOOL_KEYS = {"header", "deterministic", "stratified", "keep_positions"}


@dataclass
class RunConfig:
    input: Path
    format: str | None = None
    scale: RatingScale | None = None
    header: bool = False
    transforms: list[TransformSpec] = field(default_factory=standard_inputs)
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: dict | None = None
    folds: int = 5
    seed: int = 0
    output_dir: Path = Path(".")
    list_size: int = 10
    jobs: int = 1
    long_tail_cut: float = 0.2
    relevance_threshold: float | None = None
    kurtosis: str = "raw"
    census_min_ratings: int = 1
    deterministic: bool = False
    stratified: bool = False
    keep_positions: bool = False

    def validate(self) -> "RunConfig":
        if not self.transforms:
            raise ConfigError("at least one transform is required")
        if self.list_size < 1:
            raise ConfigError("list size must be >= 1")
        self.model.validate()
        return self


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines (``#`` comments allowed, no sections needed)."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[run]\n" + text)
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    value = value.strip().strip("'\"")  # tolerate TOML-style quoting
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key == "spec":
        return [s.strip() for s in value.split(",") if s.strip()]
    return value


def parse_grid(text: str) -> dict[str, list]:
    """``full`` or ``axis=v1,v2;axis2=v3`` into an ordered grid."""
    if text.strip().lower() == "full":
        return full_grid()
    grid: dict[str, list] = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        key, sep, values = part.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in ("reg_bias", "reg_factors", "factors", "iterations", "learning_rate", "neighbors"):
            raise ConfigError(f"bad grid axis {part!r}")
        cast = int if key in ("factors", "iterations", "neighbors") else float
        grid[key] = [cast(v) for v in values.split(",") if v.strip()]
    if not grid:
        raise ConfigError(f"empty grid {text!r}")
    return grid


def resolve(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(DEFAULTS) - {"input"}
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    def get(key):
        cli = getattr(args, key, None)
        if cli is not None and cli is not False:
            return cli
        if key == "seed" and os.environ.get("FLATREC_SEED"):
            return int(os.environ["FLATREC_SEED"])
        if key in file_values:
            return _coerce(key, file_values[key])
        return DEFAULTS[key]

    input_path = args.input or _coerce("input", file_values.get("input"))
    if not input_path:
        raise ConfigError("an --input ratings file is required")
    specs = get("spec")
    transforms = [TransformSpec.parse(s) for s in specs] if specs else standard_inputs()
    scale = get("scale")
    grid = get("grid")
    model = ModelConfig(
        algorithm=get("algorithm"),
        factors=get("factors"),
        iterations=get("iterations"),
        learning_rate=get("learning_rate"),
        reg_bias=get("reg_bias"),
        reg_factors=get("reg_factors"),
        neighbors=get("neighbors"),
        seed=get("seed"),
    )
    return RunConfig(
        input=Path(input_path),
        format=get("format"),
        scale=RatingScale.parse(scale) if scale else None,
        header=get("header"),
        transforms=transforms,
        model=model,
        grid=parse_grid(grid) if grid else None,
        folds=get("folds"),
        seed=get("seed"),
        output_dir=Path(get("output_dir")),
        list_size=get("list_size"),
        jobs=get("jobs"),
        long_tail_cut=get("long_tail_cut"),
        relevance_threshold=get("relevance_threshold"),
        kurtosis=get("kurtosis"),
        census_min_ratings=get("census_min_ratings"),
        deterministic=get("deterministic"),
        stratified=get("stratified"),
        keep_positions=get("keep_positions"),
    ).validate()


def spec_filename(spec: TransformSpec) -> str:
    return spec.render().replace(":", "-").replace("=", "")


def _stamp(config: RunConfig) -> list[str]:
    if config.deterministic:
        return []
    return [f"#generated={dt.datetime.now(dt.timezone.utc).isoformat(timespec='seconds')}"]


def _load(config: RunConfig) -> Dataset:
    if not config.input.exists():
        raise DataError(f"dataset not found: {config.input}")
    return load_ratings(config.input, config.format, scale=config.scale, header=config.header)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    _logger.info("wrote %s", path)


def _json(payload: dict, config: RunConfig) -> str:
    if not config.deterministic:
        payload = {**payload, "generated": _stamp(config)[0].split("=", 1)[1]}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# -- commands ----------------------------------------------------------------


def cmd_transform(config: RunConfig) -> int:
    dataset = _load(config)
    for spec in config.transforms:
        matrix = apply_transform(dataset, spec)
        _write(config.output_dir / f"{spec_filename(spec)}.tsv", format_matrix(matrix, _stamp(config)))
    return EXIT_OK


def cmd_analyze(config: RunConfig) -> int:
    dataset = _load(config)
    summary = []
    for spec in config.transforms:
        report = analyze(
            apply_transform(dataset, spec),
            dataset.scale,
            kurtosis_mode=config.kurtosis,
            census_min_ratings=config.census_min_ratings,
        )
        name = spec_filename(spec)
        _write(config.output_dir / f"{name}.json", _json(report.to_dict(), config))
        _write(config.output_dir / f"{name}.csv", report.plot_csv())
        summary.append(f"{report.transform:<28} F={report.flatness:.4f}  K={report.kurtosis:.4f}")
    print("\n".join(summary))
    return EXIT_OK


def _experiment_kwargs(config: RunConfig) -> dict:
    return dict(
        n=config.list_size,
        long_tail_cut=config.long_tail_cut,
        jobs=config.jobs,
        relevance_threshold=config.relevance_threshold,
        compact_long_tail=not config.keep_positions,
        stratified=config.stratified,
    )


def cmd_evaluate(config: RunConfig) -> int:
    if config.grid:
        return cmd_grid_search(config)
    dataset = _load(config)
    conditions = [Condition(spec, config.model, config.input.name) for spec in config.transforms]
    report = run_experiment(dataset, conditions, config.folds, config.seed, **_experiment_kwargs(config))
    _write(config.output_dir / "report.json", _json(report.to_dict(), config))
    _write(config.output_dir / "report.csv", report.to_csv())
    print(render_table(report.to_dict(per_user=False)))
    return EXIT_PARTIAL if report.failures else EXIT_OK


def cmd_grid_search(config: RunConfig) -> int:
    dataset = _load(config)
    grid = config.grid or full_grid()
    n_cells = len(expand_grid(config.model, grid))
    _logger.info("grid search over %d cells x %d inputs", n_cells, len(config.transforms))
    comparison = compare_inputs(
        dataset, config.transforms, config.model, grid, config.folds, config.seed, **_experiment_kwargs(config)
    )
    _write(config.output_dir / "best_config.json", _json(comparison.to_dict(), config))
    winners = comparison.winners_report()
    _write(config.output_dir / "report.json", _json(winners.to_dict(), config))
    _write(config.output_dir / "report.csv", winners.to_csv())
    failures = {}
    for key, g in comparison.best.items():
        name = spec_filename(TransformSpec.parse(key))
        _write(config.output_dir / f"grid-{name}.json", _json(g.to_dict(), config))
        _write(config.output_dir / f"grid-{name}.csv", g.report.to_csv())
        failures.update(g.report.failures)
    for key, g in comparison.best.items():
        print(f"{key:<28} nDCG@{config.list_size}={g.best_ndcg:.4f}  "
              f"F={comparison.flatness[key]:.4f}  K={comparison.kurtosis[key]:.4f}  {g.best_config.label()}")
    print(f"corr(F, nDCG)={comparison.corr_flatness}  corr(K, nDCG)={comparison.corr_kurtosis}")
    return EXIT_PARTIAL if failures else EXIT_OK


def render_table(report: dict) -> str:
    """Plain-text summary of an evaluation report dictionary."""
    width = max([len(c["label"]) for c in report["conditions"]] + [9])
    lines = [f"{'condition':<{width}} {'nDCG@10':>8} {'LT nDCG':>8} {'F':>7} {'K':>7}  p"]
    for c in report["conditions"]:
        if c.get("error"):
            lines.append(f"{c['label']:<{width}} FAILED: {c['error']}")
            continue
        test = c.get("ttest") or {}
        p = test.get("p")
        mark = "" if p is None else f"{p:.3g}{' *' if test.get('significant_p05') else ''}"
        flat = "-" if c["flatness"] is None else f"{c['flatness']:.3f}"
        kurt = "-" if c["kurtosis"] is None else f"{c['kurtosis']:.3f}"
        lines.append(f"{c['label']:<{width}} {c['ndcg']:>8.4f} {c['long_tail_ndcg']:>8.4f} {flat:>7} {kurt:>7}  {mark}")
    for label, corr in report.get("correlations", {}).items():
        lines.append(f"corr over {label}: F={corr.get('flatness')} K={corr.get('kurtosis')}")
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    payload = json.loads(Path(args.report).read_text(encoding="utf-8"))
    text = render_table(payload) + "\n"
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", "-i", help="ratings file (user item rating [extras])")
    p.add_argument("--format", choices=["tab", "comma", "colons", "space"], help="column delimiter (default: whitespace)")
    p.add_argument("--scale", help="rating scale, e.g. '1,2,3,4,5' or '0.5:4.0:0.5'")
    p.add_argument("--header", action="store_true", default=None, help="skip a header row")
    p.add_argument("--spec", action="append", help="transform spec (repeatable), e.g. per:last:user")
    p.add_argument("--output-dir", "-o", help="directory for output files")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", default=None, help="omit timestamps from outputs")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algorithm", help="biasedmf, svdpp, userknn or itemknn")
    p.add_argument("--factors", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--reg-bias", type=float)
    p.add_argument("--reg-factors", type=float)
    p.add_argument("--neighbors", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--list-size", type=int)
    p.add_argument("--jobs", type=int, help="parallel fold x condition workers")
    p.add_argument("--long-tail-cut", type=float)
    p.add_argument("--relevance-threshold", type=float, help="minimum raw test rating counted as relevant")
    p.add_argument("--keep-positions", action="store_true", default=None,
                   help="long-tail nDCG keeps short-head slots instead of compacting the list")
    p.add_argument("--stratified", action="store_true", default=None, help="per-user stratified folds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flatrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="write transformed rating files")
    _add_data_args(p)

    p = sub.add_parser("analyze", help="flatness / kurtosis / census reports")
    _add_data_args(p)
    p.add_argument("--kurtosis", choices=["raw", "binned"])
    p.add_argument("--census-min-ratings", type=int)

    p = sub.add_parser("evaluate", help="cross-validated top-N evaluation")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--grid", help="'full' or 'axis=v1,v2;axis=...' to grid-search each input")

    p = sub.add_parser("grid-search", help="best configuration per input transform")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--grid", help="'full' (default, 144 cells) or 'axis=v1,v2;axis=...'")

    p = sub.add_parser("report", help="render a saved report.json as a table")
    p.add_argument("report", help="report.json written by evaluate")
    p.add_argument("--output", help="write the table here instead of stdout")
    return parser


COMMANDS = {
    "transform": cmd_transform,
    "analyze": cmd_analyze,
    "evaluate": cmd_evaluate,
    "grid-search": cmd_grid_search,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "report":
            return cmd_report(args)
        config = resolve(args)
        return COMMANDS[args.command](config)
    except (TransformError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"flatrec: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (DataError, DistributionError, EvaluationError, ValueError, OSError) as exc:
        print(f"flatrec: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
