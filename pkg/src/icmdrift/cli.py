"""Command-line driver: generate streams, run experiments, analyse runs.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from . import __version__
from .ensemble import DEFAULT_THETAS, EnsembleConfig, RunRecord, run
from .evaluation import (
    AccuracyEstimate,
    accuracy,
    aggregate,
    subset_analysis,
    write_subset_csv,
    write_test_json,
    z_test,
)
from .streams import (
    SEA_SCHEMA,
    STAGGER_SCHEMA,
    ConceptSchedule,
    DataError,
    NoiseSpec,
    SchemaError,
    generate_sea,
    generate_stagger,
    inject_label_noise,
    load_csv,
    schema_from_csv,
    write_csv,
)

log = logging.getLogger("icmdrift")

EXIT_OK, EXIT_SPEC, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# training-set size of the lone pipeline in single mode, per dataset
SINGLE_THETA = {"stagger": 200, "sea": 1000, "csv": 300}
DEFAULT_CHUNK = {"stagger": 10_000, "sea": 250_000}
CONCEPTS = ("a", "b", "c", "d")


class SpecError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentSpec:
    dataset: str = "stagger"  # stagger, sea or a CSV path
    n: int | None = None  # generated default 100,000; CSV default all rows
    chunk_size: int | None = None
    noise: float = 0.0
    noise_mode: str = "randomize"
    betting: str = "MIHNN"
    mode: str = "ensemble"
    r: float = 10.0
    delta: float = 0.01
    theta: list | None = None
    seeds: list = field(default_factory=lambda: [1])
    pvalue_window: int | None = 1000
    epsilon: float = 100.0
    window: int = 5000
    trees: int = 40
    label_column: str = "label"
    features: list | None = None
    categorical: list = field(default_factory=list)
    out: str = "out"

    def resolve(self):
        """Validate and fill every dataset-dependent default."""
        if self.mode not in ("single", "ensemble"):
            raise SpecError(f"mode must be 'single' or 'ensemble', not {self.mode!r}")
        if not self.seeds:
            raise SpecError("need at least one seed")
        if not 0.0 <= self.noise <= 1.0:
            raise SpecError("noise must lie in [0, 1]")
        if self.noise_mode not in ("flip", "randomize"):
            raise SpecError("noise_mode must be 'flip' or 'randomize'")
        kind = self.kind
        if kind == "csv" and not os.path.exists(self.dataset):
            raise SpecError(f"dataset {self.dataset!r} is neither stagger, sea nor an existing file")
        if kind != "csv":
            if self.n is None:
                self.n = 100_000
            if self.n < 1:
                raise SpecError("n must be >= 1 for generated datasets")
            if self.chunk_size is None:
                self.chunk_size = DEFAULT_CHUNK[kind]
            if self.chunk_size < 1:
                raise SpecError("chunk_size must be >= 1")
        if self.theta is None:
            self.theta = [SINGLE_THETA[kind]] if self.mode == "single" else list(DEFAULT_THETAS)
        self.theta = [int(t) for t in self.theta]
        self.seeds = [int(s) for s in self.seeds]
        try:
            self.ensemble_config(self.seeds[0])
        except ValueError as err:
            raise SpecError(str(err)) from None
        return self

    @property
    def kind(self):
        d = self.dataset.lower()
        return d if d in ("stagger", "sea") else "csv"

    def ensemble_config(self, seed):
        return EnsembleConfig(
            thetas=tuple(self.theta),
            r=self.r,
            delta=self.delta,
            betting=self.betting,
            seed=seed,
            tree_count=self.trees,
            epsilon=self.epsilon,
            window=self.window,
            pvalue_window=self.pvalue_window,
        )

    def stream(self, seed):
        """``(schema, stream)`` for one seed."""
        kind = self.kind
        if kind == "stagger":
            schema = STAGGER_SCHEMA
            s = generate_stagger(self.n, ConceptSchedule(CONCEPTS, self.chunk_size), seed)
        elif kind == "sea":
            schema = SEA_SCHEMA
            s = generate_sea(
                self.n, ConceptSchedule(CONCEPTS, self.chunk_size, cycle=False), seed
            )
        else:
            schema, s = self._csv_stream()
        if self.noise > 0.0:
            s = inject_label_noise(
                s, NoiseSpec(self.noise, seed, self.noise_mode, tuple(schema.classes))
            )
        return schema, s

    def _csv_stream(self):
        import csv

        with open(self.dataset, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
        if header is None:
            raise DataError(f"{self.dataset}: empty file (no header row)")
        header = [h.strip() for h in header]
        if self.label_column not in header:
            raise SchemaError(f"label column {self.label_column!r} not in header")
        keep = self.features or [h for h in header if h != self.label_column]
        schema = schema_from_csv(self.dataset, self.label_column, keep, self.categorical)
        s = load_csv(self.dataset, schema, self.label_column, keep)
        if self.n:
            s = _take(s, self.n)
        return schema, s


def _take(stream, n):
    for i, z in enumerate(stream):
        if i >= n:
            return
        yield z


def _csv_list(text, cast=str):
    return [cast(v) for v in text.split(",") if v.strip()]


def _add_stream_args(p, dataset_help):
    p.add_argument("--dataset", help=dataset_help)
    p.add_argument("--n", type=int, help="number of instances (CSV: 0 or absent = all rows)")
    p.add_argument("--chunk-size", type=int, help="instances per concept")
    p.add_argument("--noise", type=float, help="label-noise rate")
    p.add_argument("--noise-mode", choices=("flip", "randomize"),
                   help="flip: always change the label; randomize: redraw it uniformly")


def build_parser():
    parser = argparse.ArgumentParser(prog="icmdrift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic stream to CSV")
    _add_stream_args(g, "stagger or sea")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True, help="output CSV path")

    r = sub.add_parser("run", help="run single-ICM or ensemble experiments")
    _add_stream_args(r, "stagger, sea or a CSV path")
    r.add_argument("--betting", help="IH, MIH, MIHNN or CAU")
    r.add_argument("--mode", choices=("single", "ensemble"))
    r.add_argument("--r", type=float, help="retrain-anchor threshold")
    r.add_argument("--delta", type=float, help="significance level")
    r.add_argument("--theta", type=lambda s: _csv_list(s, int), help="comma list of training sizes")
    r.add_argument("--seeds", type=lambda s: _csv_list(s, int), help="comma list of seeds")
    r.add_argument("--pvalue-window", type=int,
                   help="p-values used by the density estimators (0 = all since retraining)")
    r.add_argument("--epsilon", type=float, help="CAUTIOUS threshold")
    r.add_argument("--window", type=int, help="CAUTIOUS look-back")
    r.add_argument("--trees", type=int, help="trees per treebagger")
    r.add_argument("--label-column", help="label column of a CSV dataset")
    r.add_argument("--features", type=_csv_list, help="CSV feature columns (default: all others)")
    r.add_argument("--categorical", type=_csv_list, help="CSV columns to treat as categorical")
    r.add_argument("--config", help="JSON file; its keys override the flags")
    r.add_argument("--out", help="output directory")

    s = sub.add_parser("subsets", help="re-vote every pipeline subset of recorded runs")
    s.add_argument("run_dir", help="directory written by 'run' in ensemble mode")
    s.add_argument("--sizes", type=lambda v: _csv_list(v, int), help="subset sizes (default: all)")
    s.add_argument("--out", help="output CSV (default: RUN_DIR/subsets.csv)")

    t = sub.add_parser("ttest", help="one-tailed Z-test that A is more accurate than B")
    t.add_argument("summary_a")
    t.add_argument("summary_b")
    t.add_argument("--rho", type=float, default=-1.0)
    t.add_argument("--out", help="output JSON (default: standard output)")
    return parser


def _spec_from_args(args):
    spec = ExperimentSpec()
    names = {f.name for f in fields(ExperimentSpec)}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            setattr(spec, name, v)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise SpecError(f"cannot read config {args.config}: {err}") from None
        unknown = set(overrides) - names
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        for k, v in overrides.items():
            setattr(spec, k, v)
    if spec.pvalue_window == 0:
        spec.pvalue_window = None
    return spec.resolve()


def cmd_generate(args):
    spec = _spec_from_args(args)
    if spec.kind == "csv":
        raise SpecError("generate needs --dataset stagger or sea")
    schema, stream = spec.stream(args.seed)
    count = write_csv(stream, args.out, schema)
    log.info("wrote %d instances to %s", count, args.out)
    return EXIT_OK


def cmd_run(args):
    spec = _spec_from_args(args)
    os.makedirs(spec.out, exist_ok=True)
    per_seed = []
    estimates = []
    classes = None
    for seed in spec.seeds:
        schema, stream = spec.stream(seed)
        log.info("seed %d: running %s on %s", seed, spec.mode, spec.dataset)
        record = run(stream, spec.ensemble_config(seed), schema)
        classes = record.classes
        path = os.path.join(spec.out, f"run_seed{seed}.csv")
        record.to_csv(path)
        est = accuracy(record)
        estimates.append(est)
        per_seed.append(
            {
                "seed": seed,
                "record": os.path.basename(path),
                "accuracy": est.p_hat,
                "available": est.n,
                "unavailable": est.unavailable,
                "alarms": int(record.alarms.sum()),
            }
        )
        log.info("seed %d: accuracy %.4f over %d predictions", seed, est.p_hat, est.n)
    agg = aggregate(estimates)
    summary = {
        "config": asdict(spec),
        "classes": list(classes),
        "runs": per_seed,
        "aggregate": asdict(agg),
    }
    with open(os.path.join(spec.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary["aggregate"]))
    return EXIT_OK


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read {path}: {err}") from None


def cmd_subsets(args):
    summary = _load_json(os.path.join(args.run_dir, "summary.json"))
    classes = summary["classes"]
    P = len(summary["config"]["theta"])
    tables = []
    for entry in summary["runs"]:
        record = RunRecord.from_csv(os.path.join(args.run_dir, entry["record"]), classes)
        if record.n_pipelines != P:
            raise DataError(
                f"{entry['record']}: {record.n_pipelines} pipelines, summary says {P}"
            )
        tables.append(subset_analysis(record, args.sizes))
    # average over seeds, subset by subset
    merged = {}
    for size, rows in tables[0].items():
        out = []
        for i, row in enumerate(rows):
            accs = [t[size][i].accuracy for t in tables]
            nas = [t[size][i].unavailable for t in tables]
            out.append(
                type(row)(row.members, sum(accs) / len(accs), round(sum(nas) / len(nas)))
            )
        merged[size] = out
    path = args.out or os.path.join(args.run_dir, "subsets.csv")
    write_subset_csv(merged, path)
    log.info("wrote %d subsets to %s", sum(len(v) for v in merged.values()), path)
    return EXIT_OK


def _estimate_from(path):
    data = _load_json(path)
    block = data.get("aggregate", data)
    try:
        return AccuracyEstimate(
            float(block["p_hat"]), float(block["n"]), int(block.get("k", 1)),
            float(block.get("unavailable", 0.0)),
        )
    except (KeyError, TypeError) as err:
        raise DataError(f"{path}: missing accuracy field {err}") from None


def cmd_ttest(args):
    a, b = _estimate_from(args.summary_a), _estimate_from(args.summary_b)
    result = z_test(a, b, args.rho)
    if args.out:
        write_test_json(result, args.out, a=asdict(a), b=asdict(b))
    else:
        print(json.dumps(result.to_dict()))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "subsets": cmd_subsets, "ttest": cmd_ttest}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (SpecError, SchemaError) as err:
        log.error("%s", err)
        return EXIT_SPEC
    except (DataError, OSError) as err:
        log.error("%s", err)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001 - map anything else to the runtime code
        log.error("%s: %s", type(err).__name__, err)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
