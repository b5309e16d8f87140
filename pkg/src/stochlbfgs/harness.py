"""Experiment configuration, reference solutions and grid execution.

Config files are TOML. Grammar (all keys optional unless noted)::

    epochs = 30                  # >= 1
    seeds = [0, 1, 2]            # non-empty list of ints
    out = "results"              # output directory
    format = "csv"               # per-run files: csv | json
    workers = 0                  # > 0 enables the simulated distributed path
    jobs = 1                     # parallel grid cells (process pool)

    [problem]                    # required
    kind = "logistic"            # logistic | least_squares | mlp | softmax
    dataset = "train.libsvm"     # libsvm file, relative to the config file
    reg = 0.001
    test_fraction = 0.2
    split_seed = 0
    hidden = 32                  # mlp only
    ggn_mode = "logits"          # mlp only: logits | probabilities

    [problem.synth]              # used when no dataset is given
    n = 1000
    d = 20
    noise = 1.0
    seed = 0
    n_classes = 3

    [optimizer]                  # list values span the grid
    variants = ["lbfgs-h", "adam"]
    lr = [0.01]
    batch_size = [64]
    memory = [10]
    schedule = "constant"        # any other OptimizerConfig field, scalar

    [theory]                     # used by check-theory
    eigen_bounds = true
    pair_inequalities = true
    variance = true
    batch_gradient = true
    plateau = false
    steps = 200
    memory = 5
    plateau_seeds = 20
    plateau_epochs = 60

Output layout under ``out``::

    runs/<variant>_lr<lr>_b<b>_m<m>_seed<s>.csv   one RunRecord per run
    aggregate.csv                                 min/mean/max over seeds
    reference.json                                F*, w* and certification
    ledger.json                                   per-run communication (workers > 0)
    manifest.json                                 config echo and run status

No timestamps are written, so repeated runs produce identical bytes.
"""

import csv
import io
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .optimizer import (
    CSV_COLUMNS,
    VARIANTS,
    DivergedError,
    OptimizerConfig,
    run,
    solve_full_batch,
)
from .problems import make_problem, parse_libsvm, synth_dataset, train_test_split

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "STOCHLBFGS_OUT"
DEFAULT_OUT = "stochlbfgs-out"
GRID_KEYS = ("variants", "lr", "batch_size", "memory")
AGG_METRICS = ("train_loss", "subopt", "test_error", "grad_norm")


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass
class ExperimentConfig:
    problem: dict
    variants: list
    lr: list
    batch_size: list
    memory: list
    options: dict = field(default_factory=dict)
    epochs: int = 10
    seeds: list = field(default_factory=lambda: [0])
    out: str = None
    format: str = "csv"
    workers: int = 0
    jobs: int = 1
    theory: dict = field(default_factory=dict)
    base_dir: str = "."

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError(f"seeds must be non-negative integers, got {self.seeds}")
        for key in GRID_KEYS:
            if not getattr(self, key):
                raise ConfigError(f"optimizer grid '{key}' is empty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; choose from {list(VARIANTS)}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.workers < 0 or self.jobs < 1:
            raise ConfigError("workers must be >= 0 and jobs >= 1")
        if "kind" not in self.problem:
            raise ConfigError("[problem] needs a 'kind'")
        # surface bad optimizer options now rather than mid-grid
        for cell in self.cells():
            try:
                self.optimizer_config(cell, self.seeds[0]).validate()
            except (TypeError, ValueError) as err:
                raise ConfigError(f"invalid optimizer setting {cell}: {err}") from None
        return self

    def cells(self):
        return list(itertools.product(self.variants, self.lr, self.batch_size, self.memory))

    def optimizer_config(self, cell, seed):
        variant, lr, b, m = cell
        return OptimizerConfig.from_dict({**self.options, "variant": variant, "lr": lr,
                                          "batch_size": b, "memory": m, "seed": seed,
                                          "workers": self.workers})

    def output_dir(self):
        return Path(self.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


_TOP_KEYS = {"epochs", "seeds", "out", "format", "workers", "jobs", "problem", "optimizer",
             "theory"}
_PROBLEM_KEYS = {"kind", "dataset", "reg", "test_fraction", "split_seed", "hidden", "ggn_mode",
                 "n_features", "synth"}
_SYNTH_KEYS = {"n", "d", "noise", "seed", "n_classes"}
_THEORY_KEYS = {"eigen_bounds", "pair_inequalities", "variance", "batch_gradient", "plateau",
                "steps", "memory", "plateau_seeds", "plateau_epochs", "plateau_lr"}


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _check_keys(section, table, allowed):
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")


def config_from_dict(raw, base_dir="."):
    """Build and validate an :class:`ExperimentConfig` from parsed TOML."""
    _check_keys("top level", raw, _TOP_KEYS)
    if "problem" not in raw:
        raise ConfigError("missing [problem] section")
    problem = dict(raw["problem"])
    _check_keys("[problem]", problem, _PROBLEM_KEYS)
    if "synth" in problem:
        _check_keys("[problem.synth]", problem["synth"], _SYNTH_KEYS)
    opt = dict(raw.get("optimizer", {}))
    grid = {
        "variants": _as_list(opt.pop("variants", opt.pop("variant", ["lbfgs-h"]))),
        "lr": [float(x) for x in _as_list(opt.pop("lr", [0.01]))],
        "batch_size": [int(x) for x in _as_list(opt.pop("batch_size", [64]))],
        "memory": [int(x) for x in _as_list(opt.pop("memory", [10]))],
    }
    known = {f.name for f in fields(OptimizerConfig)} - {"variant", "lr", "batch_size",
                                                         "memory", "seed", "workers"}
    _check_keys("[optimizer]", opt, known)
    theory = dict(raw.get("theory", {}))
    _check_keys("[theory]", theory, _THEORY_KEYS)
    seeds = raw.get("seeds", [0])
    cfg = ExperimentConfig(problem=problem, options=opt, epochs=int(raw.get("epochs", 10)),
                           seeds=_as_list(seeds), out=raw.get("out"),
                           format=raw.get("format", "csv"), workers=int(raw.get("workers", 0)),
                           jobs=int(raw.get("jobs", 1)), theory=theory,
                           base_dir=str(base_dir), **grid)
    return cfg.validate()


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return config_from_dict(raw, base_dir=path.parent)


def build_problem(cfg):
    """Return ``(problem, test_data)`` for the config's problem section."""
    p = cfg.problem
    kind = p["kind"]
    if "dataset" in p:
        path = Path(cfg.base_dir) / p["dataset"]
        try:
            data = parse_libsvm(path, p.get("n_features"))
        except OSError as err:
            raise ConfigError(f"cannot read dataset {path}: {err}") from None
    else:
        synth = {"n": 1000, "d": 20, "noise": 1.0, "seed": 0, **p.get("synth", {})}
        data_kind = "least_squares" if kind in ("least_squares", "lsq") else (
            "logistic" if kind == "logistic" else "multiclass")
        data = synth_dataset(data_kind, synth["n"], synth["d"], seed=synth["seed"],
                             noise=synth["noise"], n_classes=synth.get("n_classes", 3))
    frac = p.get("test_fraction", 0.2)
    train, test = train_test_split(data, frac, seed=p.get("split_seed", 0))
    kw = {}
    if "reg" in p:
        kw["reg"] = p["reg"]
    if kind in ("mlp", "mlp_cross_entropy", "softmax"):
        kw["n_classes"] = int(data.meta.get("n_classes", int(np.max(data.labels)) + 1))
        if kind != "softmax" and "hidden" in p:
            kw["hidden"] = p["hidden"]
        if "ggn_mode" in p:
            kw["ggn_mode"] = p["ggn_mode"]
    try:
        problem = make_problem(kind, train, **kw)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return problem, (test if test.n else None)


@dataclass
class ReferenceSolution:
    w: np.ndarray
    f: float
    grad_norm: float
    tol: float
    certified: bool

    @property
    def label(self):
        return "F*" if self.certified else "best-found"

    def as_dict(self):
        return {"f": self.f, "grad_norm": self.grad_norm, "tol": self.tol,
                "certified": self.certified, "label": self.label, "w": self.w.tolist()}


def compute_reference(problem, tol=1e-10, max_iter=5000, w0=None):
    """Full-batch classical L-BFGS with backtracking to ``tol`` gradient norm.

    Only convex problems reaching the tolerance are certified; anything else
    is a best-found value.
    """
    w, f, gn, converged = solve_full_batch(problem, w0=w0, tol=tol, max_iter=max_iter)
    return ReferenceSolution(w, float(f), float(gn), tol, bool(converged and problem.convex))


def run_name(cell, seed):
    variant, lr, b, m = cell
    return f"{variant}_lr{lr:g}_b{b}_m{m}_seed{seed}"


def _run_cell(args):
    cfg, cell, seed, f_star, out_dir = args
    problem, test = build_problem(cfg)
    opt_cfg = cfg.optimizer_config(cell, seed)
    diverged = None
    try:
        rec = run(problem, opt_cfg, cfg.epochs, f_star=f_star, test_data=test)
    except DivergedError as err:
        rec, diverged = err.record, str(err)
    name = run_name(cell, seed)
    path = out_dir / "runs" / f"{name}.{cfg.format}"
    with open(path, "w", newline="") as fh:
        if cfg.format == "csv":
            rec.write_csv(fh)
        else:
            json.dump({c: getattr(rec, c) for c in CSV_COLUMNS}, fh, indent=1)
            fh.write("\n")
    return {"name": name, "cell": list(cell), "seed": seed, "file": str(path.relative_to(out_dir)),
            "diverged": diverged, "epochs_logged": len(rec.epoch),
            "final_subopt": rec.subopt[-1], "ledger": rec.ledger}


def read_run_file(path):
    """Load a per-run CSV or JSON file into column lists."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {c: [] for c in CSV_COLUMNS}
    for row in rows:
        for c in CSV_COLUMNS:
            out[c].append(int(row[c]) if c in ("epoch", "skips", "comm_scalars")
                          else float(row[c]))
    return out


def aggregate_runs(groups):
    """Per-epoch min/mean/max across seeds.

    ``groups`` maps a cell key ``(variant, lr, b, m)`` to a list of run
    files. Runs that stopped early contribute only the epochs they logged.
    Returns a list of row dicts, ordered by cell then epoch.
    """
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        runs = [read_run_file(p) for p in groups[key]]
        n_ep = max(len(r["epoch"]) for r in runs)
        for e in range(n_ep):
            live = [r for r in runs if len(r["epoch"]) > e]
            row = {"variant": key[0], "lr": key[1], "batch_size": key[2], "memory": key[3],
                   "epoch": e, "n_runs": len(live)}
            for metric in AGG_METRICS:
                vals = np.array([r[metric][e] for r in live], dtype=float)
                row[f"{metric}_min"] = float(np.min(vals))
                row[f"{metric}_mean"] = float(np.mean(vals))
                row[f"{metric}_max"] = float(np.max(vals))
            rows.append(row)
    return rows


def write_aggregate(rows, fh):
    cols = ["variant", "lr", "batch_size", "memory", "epoch", "n_runs"] + [
        f"{m}_{s}" for m in AGG_METRICS for s in ("min", "mean", "max")]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])


@dataclass
class ExperimentResult:
    out_dir: Path
    reference: ReferenceSolution
    runs: list
    aggregate: list

    @property
    def diverged(self):
        return [r for r in self.runs if r["diverged"]]

    @property
    def ledger(self):
        return {r["name"]: r["ledger"] for r in self.runs if r["ledger"] is not None}


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg, out=None, log=None):
    """Execute the full grid; per-run failures are recorded and the grid continues."""
    out_dir = Path(out) if out is not None else cfg.output_dir()
    (out_dir / "runs").mkdir(parents=True, exist_ok=True)
    problem, _ = build_problem(cfg)
    ref = compute_reference(problem)
    f_star = ref.f if ref.certified else None
    _dump_json(ref.as_dict(), out_dir / "reference.json")

    tasks = [(cfg, cell, seed, f_star, out_dir) for cell in cfg.cells() for seed in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_run_cell, tasks))
    else:
        runs = []
        for task in tasks:
            runs.append(_run_cell(task))
            if log:
                r = runs[-1]
                status = "diverged" if r["diverged"] else f"final {r['final_subopt']:.3e}"
                log(f"{r['name']}: {status}")

    groups = {}
    for r in runs:
        groups.setdefault(tuple(r["cell"]), []).append(out_dir / r["file"])
    rows = aggregate_runs(groups)
    with open(out_dir / "aggregate.csv", "w", newline="") as fh:
        write_aggregate(rows, fh)
    result = ExperimentResult(out_dir, ref, runs, rows)
    if cfg.workers:
        _dump_json({"workers": cfg.workers, "runs": result.ledger}, out_dir / "ledger.json")
    manifest = {
        "epochs": cfg.epochs, "seeds": cfg.seeds, "problem": cfg.problem,
        "options": cfg.options, "workers": cfg.workers,
        "subopt_axis": "F - F*" if ref.certified else "train_loss",
        "reference": {k: v for k, v in ref.as_dict().items() if k != "w"},
        "runs": [{k: v for k, v in r.items() if k != "ledger"} for r in runs],
    }
    _dump_json(manifest, out_dir / "manifest.json")
    return result


def check_theory(cfg, log=None):
    """Theory checks selected in the config's [theory] section; returns reports."""
    from . import theory as th

    t = {"eigen_bounds": True, "pair_inequalities": True, "variance": True,
         "batch_gradient": True, "plateau": False, "steps": 200, "memory": 5,
         "plateau_seeds": 20, "plateau_epochs": 60, **cfg.theory}
    problem, _ = build_problem(cfg)
    seed = cfg.seeds[0]
    reports = []
    if t["eigen_bounds"] or t["pair_inequalities"]:
        if problem.dim > 50:
            raise ConfigError(f"dense materialisation needs dim <= 50, got {problem.dim}")
        variant = cfg.variants[0] if cfg.variants[0] in ("lbfgs-h", "lbfgs-f") else "lbfgs-h"
        if not problem.convex:
            variant = "lbfgs-f"
        opt = OptimizerConfig.from_dict({**cfg.options, "variant": variant, "lr": cfg.lr[0],
                                         "batch_size": min(cfg.batch_size[0], problem.n),
                                         "memory": t["memory"], "seed": seed})
        trace = th.collect_eigen_trace(problem, opt, t["steps"])
        cautious = not problem.convex
        if t["eigen_bounds"]:
            reports.append(th.check_eigen_bounds(trace, cautious=cautious))
        if t["pair_inequalities"]:
            reports.append(th.check_pair_inequalities(trace, cautious=cautious))
    rng = np.random.default_rng(seed)
    ref = None
    if t["variance"] or t["batch_gradient"]:
        # exhaustive checks on an n = 8 subsample of the problem
        idx = np.sort(rng.choice(problem.n, size=min(8, problem.n), replace=False))
        small_kw = {"reg": problem.reg}
        if hasattr(problem, "hidden"):
            small_kw.update(n_classes=problem.n_classes, hidden=problem.hidden)
        small = make_problem(problem.kind, problem.data.subset(idx), **small_kw)
        ref_small = compute_reference(small)
        if t["variance"]:
            G = small.per_sample_gradients(ref_small.w)
            worst = min((th.check_variance_bound(G, b) for b in range(1, small.n + 1)),
                        key=lambda r: r.margin)
            worst.details["all_b"] = True
            reports.append(worst)
        if t["batch_gradient"] and small.kind in ("least_squares", "logistic") and ref_small.certified:
            Lam = th.component_smoothness(small)
            lam = float(np.linalg.eigvalsh(small.hessian_matrix(ref_small.w))[0])
            if small.kind == "logistic":
                lam = small.reg
            ws = ref_small.w + rng.standard_normal((5, small.dim))
            worst = min((th.check_batch_gradient_bound(small, ws, b, ref_small.w, lam, Lam)
                         for b in range(1, small.n + 1)), key=lambda r: r.margin)
            reports.append(worst)
    if t["plateau"]:
        ref = compute_reference(problem)
        alphas = [float(a) for a in _as_list(t.get("plateau_lr", [cfg.lr[0], cfg.lr[0] / 4]))]
        base = {**cfg.options, "variant": cfg.variants[0], "batch_size": cfg.batch_size[0],
                "memory": cfg.memory[0]}
        family = th.plateau_family(problem, base, alphas, range(t["plateau_seeds"]),
                                   t["plateau_epochs"], ref.f if ref.certified else None)
        reports.append(th.check_plateau_monotone(family))
    if log:
        for r in reports:
            log(r.line())
    return reports


def format_result_json(result):
    out = {"out_dir": str(result.out_dir), "reference": {
        k: v for k, v in result.reference.as_dict().items() if k != "w"},
        "runs": [{k: v for k, v in r.items() if k != "ledger"} for r in result.runs]}
    if result.ledger:
        out["ledger"] = result.ledger
    return out


def records_to_csv_text(rows):
    buf = io.StringIO()
    write_aggregate(rows, buf)
    return buf.getvalue()


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "ReferenceSolution",
    "aggregate_runs",
    "build_problem",
    "check_theory",
    "compute_reference",
    "config_from_dict",
    "load_config",
    "read_run_file",
    "run_experiment",
]
