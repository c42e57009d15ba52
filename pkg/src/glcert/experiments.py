"""Experiment orchestration: certification tables, robustness curves,
label-count sweeps and timing comparisons.

Artifacts are plain CSV (floats printed with repr-exact precision so files
round-trip bit-for-bit) plus standalone SVG plots. Every artifact carries the
configuration hash on its first line; reruns with the same configuration and
seeds are byte-identical, except timing tables, which measure the host.
Peak-memory cells outside timing mode are 0, meaning "not measured" - keeping
tracemalloc off the hot path leaves wall times honest.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
import tracemalloc
from configparser import ConfigParser
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attack import ATTACK_KINDS
from .certify import calibrate_constants, constant_grid
from .classify import accuracy, knn_classify
from .data import (DataError, Dataset, SplitSpec, apply_label_mask,
                   gen_halfmoon, load_abalone, load_mnist_1v7)
from .defend import augment_adversarial, robust_prune, select_separation
from .pipeline import (AttackContext, Pipeline, PipelineConfig,
                       SubstituteSettings)
from .graph import KernelSpec
from .solve import check_maximum_principle, harmonic_extend

__all__ = [
    "MODES", "VARIANTS", "ExperimentError", "ExperimentConfig", "RunRecord",
    "config_from_ini", "config_hash", "write_table", "read_table",
    "run_certify_experiment", "run_robust_curves", "run_label_sweep",
    "run_timing", "make_splits",
]

MODES = ("certify", "robust_curve", "label_sweep", "timing")
VARIANTS = ("gl", "atgl", "atgl_all", "robust_gl",
            "knn", "atnn", "atnn_all", "robust_nn")
_GL_VARIANTS = ("gl", "atgl", "atgl_all", "robust_gl")
MAXIMUM_PRINCIPLE_TOL = 1e-8
BUDGET_TOL = 1e-9


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, hashable description of one experiment run."""

    mode: str = "certify"
    dataset: str = "halfmoon"
    out_dir: str = "."
    seeds: tuple = (0, 1, 2, 3, 4)

    # data
    train_count: int = 2000
    test_count: int = 1000
    validation_count: int = 1000
    labeled_counts: tuple = (2000,)
    noise_std: float = 0.2
    data_seed: int = 0
    abalone_path: str = ""
    mnist_dir: str = ""
    mnist_per_class: int = 500

    # graph
    graph_k: int = 10
    kernel_kind: str = ""        # nonempty switches to a bandwidth graph
    kernel_epsilon: float = 0.0
    knn_weights: str = "self_tuning_gaussian"
    knn_baseline_k: int = 1

    # attacks
    attacks: tuple = ATTACK_KINDS
    r_grid: tuple = (0.05, 0.1, 0.15, 0.2)
    budget_count: int = 20
    direction_sign: str = "toward_opponent"
    substitute_rounds: int = 3
    substitute_aug_step: float = 0.1
    substitute_seed_pool: int = 150

    # defenses
    variants: tuple = VARIANTS
    defense_budget: float = 0.0      # 0 -> max of r_grid
    separation_grid: tuple = (0.05, 0.1, 0.2, 0.4)

    # calibration
    calib_fraction: float = 0.2
    calib_seeds: tuple = (0, 1, 2)
    calib_attacks: tuple = ("direct",)
    c_small_grid: tuple = (0.2206, 0.4605)
    c_big_grid: tuple = (0.57, 1.25)

    # timing
    timing_ks: tuple = (5, 10, 15, 20)
    timing_repeats: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ExperimentError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise ExperimentError("seeds must be nonempty")
        if any(b <= a for a, b in zip(self.r_grid, self.r_grid[1:])):
            raise ExperimentError("r_grid must be strictly ascending")
        bad = [a for a in self.attacks if a not in ATTACK_KINDS]
        if bad:
            raise ExperimentError(f"unknown attacks {bad}")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ExperimentError(f"unknown variants {bad}")
        if self.dataset not in ("halfmoon", "abalone", "mnist17"):
            raise ExperimentError(f"unknown dataset {self.dataset!r}")
        if self.budget_count < 2:
            raise ExperimentError("budget_count must be at least 2")

    @property
    def effective_defense_budget(self) -> float:
        if self.defense_budget > 0:
            return self.defense_budget
        return max(self.r_grid) if self.r_grid else 0.0


def config_hash(cfg: ExperimentConfig) -> str:
    """Identity of the experiment itself; where artifacts land is excluded."""
    items = sorted((k, v) for k, v in asdict(cfg).items() if k != "out_dir")
    blob = "\n".join(f"{k}={v!r}" for k, v in items)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# INI section -> config fields. Values are parsed by the declared field type;
# tuple fields accept comma- or space-separated entries.
_SECTIONS = {
    "experiment": ("mode", "dataset", "out_dir", "seeds", "variants"),
    "data": ("train_count", "test_count", "validation_count",
             "labeled_counts", "noise_std", "data_seed", "abalone_path",
             "mnist_dir", "mnist_per_class"),
    "graph": ("graph_k", "kernel_kind", "kernel_epsilon", "knn_weights",
              "knn_baseline_k"),
    "attack": ("attacks", "r_grid", "budget_count", "direction_sign",
               "substitute_rounds", "substitute_aug_step",
               "substitute_seed_pool"),
    "defense": ("defense_budget", "separation_grid"),
    "calibration": ("calib_fraction", "calib_seeds", "calib_attacks",
                    "c_small_grid", "c_big_grid"),
    "timing": ("timing_ks", "timing_repeats"),
}


def _parse_value(raw, template):
    if isinstance(template, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        if template and isinstance(template[0], str):
            return tuple(parts)
        if all("." not in p and "e" not in p.lower() for p in parts):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    if isinstance(template, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw.strip()


def config_from_ini(path, **overrides) -> ExperimentConfig:
    """Build a config from a key=value INI file plus keyword overrides."""
    parser = ConfigParser()
    read = parser.read(path)
    if not read:
        raise ExperimentError(f"cannot read config file {path}")
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in parser.options(section):
            if key not in keys:
                raise ExperimentError(
                    f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _parse_value(parser.get(section, key),
                                       getattr(defaults, key))
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ExperimentError(f"{path}: unknown section [{section}]")
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - known
    if unknown:
        raise ExperimentError(f"unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**values)


@dataclass(frozen=True)
class RunRecord:
    """One evaluated cell: a classifier variant under one attack budget."""

    config_hash: str
    seed: int
    variant: str
    attack: str            # "none" for the clean evaluation
    r: float
    accuracy: float
    u_sup_deviation: float
    solver_iterations: int
    wall_time: float
    peak_memory: int = 0   # bytes; 0 = not measured
    labeled_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ExperimentError(f"accuracy {self.accuracy} outside [0,1]")


_RECORD_COLUMNS = ("config_hash", "seed", "variant", "attack", "r",
                   "accuracy", "u_sup_deviation", "solver_iterations",
                   "wall_time", "peak_memory", "labeled_count")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_table(path, header, rows, cfg_hash):
    lines = [f"# config={cfg_hash}", ",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ExperimentError("row width does not match header")
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_token(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def read_table(path):
    """Inverse of write_table: returns (config_hash, header, rows)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# config="):
        raise ExperimentError(f"{path}: missing config header")
    cfg_hash = lines[0].split("=", 1)[1]
    header = lines[1].split(",")
    rows = [tuple(_parse_token(t) for t in ln.split(","))
            for ln in lines[2:] if ln]
    return cfg_hash, header, rows


def records_to_rows(records):
    return [tuple(getattr(r, c) for c in _RECORD_COLUMNS) for r in records]


# ---------------------------------------------------------------------------
# data plumbing


def make_splits(cfg: ExperimentConfig, seed, labeled_count=None):
    """Generate or load (train, test, validation) for one run seed."""
    if cfg.dataset == "halfmoon":
        train, test = gen_halfmoon(cfg.train_count, cfg.test_count,
                                   cfg.noise_std, seed)
        val, _ = gen_halfmoon(cfg.validation_count, 1, cfg.noise_std,
                              seed + 90001)
    elif cfg.dataset == "abalone":
        path = cfg.abalone_path or os.environ.get("GLCERT_ABALONE", "")
        if not path:
            raise DataError("abalone requires abalone_path or GLCERT_ABALONE")
        split = SplitSpec(cfg.train_count, cfg.test_count,
                          cfg.validation_count, seed)
        train, test, val = load_abalone(path, split)
    else:
        ddir = cfg.mnist_dir or os.environ.get("GLCERT_MNIST_DIR", "")
        if not ddir:
            raise DataError("mnist17 requires mnist_dir or GLCERT_MNIST_DIR")
        train, test = load_mnist_1v7(
            os.path.join(ddir, "train-images-idx3-ubyte"),
            os.path.join(ddir, "train-labels-idx1-ubyte"),
            cfg.mnist_per_class, seed)
        val = test   # no third split in the IDX files; attacker pool = test
    if labeled_count is not None and labeled_count < train.n:
        train = apply_label_mask(train, labeled_count, seed)
    return train, test, val


def _pipeline(cfg: ExperimentConfig, dim, k_override=None) -> Pipeline:
    if cfg.kernel_kind:
        kern = KernelSpec(cfg.kernel_kind, cfg.kernel_epsilon, dim)
        pc = PipelineConfig(kernel=kern, knn_baseline_k=cfg.knn_baseline_k)
    else:
        pc = PipelineConfig(graph_k=int(k_override or cfg.graph_k),
                            knn_weights=cfg.knn_weights,
                            knn_baseline_k=cfg.knn_baseline_k)
    return Pipeline(pc)


def _settings(cfg: ExperimentConfig) -> SubstituteSettings:
    return SubstituteSettings(rounds=cfg.substitute_rounds,
                              aug_step=cfg.substitute_aug_step,
                              seed_pool=cfg.substitute_seed_pool)


def _unlabeled_view(points, labels) -> Dataset:
    return Dataset(np.asarray(points, dtype=np.float64),
                   np.asarray(labels, dtype=np.float64),
                   np.zeros(len(labels), bool), "queries", {})


def n_jobs() -> int:
    try:
        return max(1, int(os.environ.get("GLCERT_THREADS", "1")))
    except ValueError:
        return 1


def _parallel(fn, items):
    jobs = n_jobs()
    if jobs == 1 or len(items) < 2:
        return [fn(it) for it in items]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs, prefer="threads")(
        delayed(fn)(it) for it in items)


# ---------------------------------------------------------------------------
# single-cell evaluation


class _Cell:
    """Evaluation state for one (variant, seed): defended train + clean run."""

    def __init__(self, cfg, variant, train, test, val, seed, pipe: Pipeline):
        self.cfg = cfg
        self.variant = variant
        self.seed = seed
        self.test = test
        self.pipe = pipe
        self.violations = []
        self.train = self._defend(train, val)
        self.ctx = AttackContext(pipe, self.train, val.points, seed,
                                 _settings(cfg), cfg.direction_sign)
        self.is_gl = variant in _GL_VARIANTS
        if self.is_gl:
            sol, merged = pipe.solve_with_queries(self.train, test.points)
            self._check_max_principle(sol, merged)
            self.clean_u = sol.u[self.train.n:]
            self.clean_iters = sol.iterations
        else:
            pred = knn_classify(self.train, test.points, cfg.knn_baseline_k)
            self.clean_u = pred.scores
            self.clean_iters = 0
        self.clean_acc = self._acc_from_scores(self.clean_u)

    def _defend(self, train, val):
        cfg, variant = self.cfg, self.variant
        if variant in ("gl", "knn"):
            return train
        if variant in ("robust_gl", "robust_nn"):
            if variant == "robust_gl":
                def ev(pruned, v):
                    return self.pipe.gl_accuracy(pruned, v.points, v.labels)
            else:
                def ev(pruned, v):
                    return accuracy(knn_classify(pruned, v.points,
                                                 cfg.knn_baseline_k), v.labels)
            a = select_separation(train, val, cfg.separation_grid, ev)
            return robust_prune(train, a)
        kinds = ("direct",) if variant in ("atgl", "atnn") else cfg.attacks
        ctx = AttackContext(self.pipe, train, val.points, self.seed,
                            _settings(cfg), cfg.direction_sign)
        specs = [ctx.spec(k, cfg.effective_defense_budget) for k in kinds]
        return augment_adversarial(train, specs)

    def _check_max_principle(self, sol, ds):
        over, under = check_maximum_principle(sol, ds)
        worst = max(over, under)
        if worst > MAXIMUM_PRINCIPLE_TOL:
            self.violations.append(
                f"maximum principle violated by {worst:.3g} "
                f"(variant={self.variant} seed={self.seed})")

    def _acc_from_scores(self, scores):
        pred_cls = (scores >= 0.5).astype(np.int64)
        truth = (self.test.labels >= 0.5).astype(np.int64)
        return float(np.mean(pred_cls == truth))

    def evaluate(self, kind, r, labeled_count, cfg_hash) -> RunRecord:
        t0 = time.perf_counter()
        if r == 0.0 and kind == "none":
            return RunRecord(cfg_hash, self.seed, self.variant, "none", 0.0,
                             self.clean_acc, 0.0, self.clean_iters,
                             time.perf_counter() - t0,
                             labeled_count=labeled_count)
        target = _unlabeled_view(self.test.points, self.test.labels)
        pert = self.ctx.craft(kind, r, target)
        if pert.max_shift() > r + BUDGET_TOL:
            self.violations.append(
                f"budget exceeded: {pert.max_shift():.3g} > {r:.3g} "
                f"({kind}, variant={self.variant})")
        moved = pert.perturbed_points
        if self.is_gl:
            sol, merged = self.pipe.solve_with_queries(self.train, moved)
            self._check_max_principle(sol, merged)
            scores = sol.u[self.train.n:]
            iters = sol.iterations
        else:
            scores = knn_classify(self.train, moved,
                                  self.cfg.knn_baseline_k).scores
            iters = 0
        dev = float(np.max(np.abs(scores - self.clean_u)))
        return RunRecord(cfg_hash, self.seed, self.variant, kind, float(r),
                         self._acc_from_scores(scores), dev, iters,
                         time.perf_counter() - t0,
                         labeled_count=labeled_count)


# ---------------------------------------------------------------------------
# experiment drivers


def _mean_std(vals):
    arr = np.asarray(list(vals), dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run_certify_experiment(cfg: ExperimentConfig, out_dir=None):
    """Calibrate, certify and attack-sweep each labeled-count row.

    Returns (records, summary_rows, violations). Writes the certification
    summary CSV, the raw run log and one calibration report per row. A
    calibration failure propagates after its report is written.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    h = config_hash(cfg)
    records, summary, violations = [], [], []

    for labeled_count in cfg.labeled_counts:
        train0, test0, val0 = make_splits(cfg, cfg.data_seed, labeled_count)
        base = _pipeline(cfg, train0.dim)
        ctx0 = AttackContext(base, train0, val0.points, cfg.calib_seeds[0],
                             _settings(cfg), cfg.direction_sign)
        surrogates = {k: ctx0.surrogate_for(k)
                      for k in cfg.calib_attacks if k != "direct"}
        report = os.path.join(
            out_dir, f"calibration_{cfg.dataset}_{labeled_count}.txt")
        result = calibrate_constants(
            train0, cfg.calib_fraction,
            constant_grid(cfg.c_small_grid, cfg.c_big_grid),
            cfg.calib_attacks, base_config=base.cfg, seeds=cfg.calib_seeds,
            surrogates=surrogates, report_path=report)
        bounds = result.bounds
        budgets = np.linspace(0.0, bounds.r_max, cfg.budget_count)

        def run_seed(seed, _lc=labeled_count, _b=bounds):
            train, test, val = make_splits(cfg, seed, _lc)
            pipe = _pipeline(cfg, train.dim, k_override=_b.k_min)
            cell = _Cell(cfg, "gl", train, test, val, seed, pipe)
            out = [cell.evaluate("none", 0.0, _lc, h)]
            for kind in cfg.attacks:
                for r in budgets[1:]:
                    out.append(cell.evaluate(kind, float(r), _lc, h))
            return out, cell.violations

        results = _parallel(run_seed, list(cfg.seeds))
        row_records = [rec for recs, _ in results for rec in recs]
        for _, viol in results:
            violations.extend(viol)
        records.extend(row_records)

        clean = [r.accuracy for r in row_records if r.attack == "none"]
        row = [labeled_count, bounds.k_min, bounds.r_max,
               result.c_small, result.c_big]
        cm, cs = _mean_std(clean)
        row += [100 * cm, 100 * cs]
        for kind in cfg.attacks:
            vals = [r.accuracy for r in row_records if r.attack == kind]
            m, s = _mean_std(vals)
            row += [100 * m, 100 * s]
        row.append(";".join(bounds.hypothesis_violations) or "-")
        summary.append(tuple(row))

    header = ["labeled_count", "k", "r_max", "c_small", "c_big",
              "clean_mean", "clean_std"]
    for kind in cfg.attacks:
        header += [f"{kind}_mean", f"{kind}_std"]
    header.append("hypothesis_violations")
    write_table(os.path.join(out_dir, f"certify_{cfg.dataset}.csv"),
                header, summary, h)
    write_table(os.path.join(out_dir, f"runlog_certify_{cfg.dataset}.csv"),
                _RECORD_COLUMNS, records_to_rows(records), h)
    return records, summary, violations


def run_robust_curves(cfg: ExperimentConfig, out_dir=None):
    """Accuracy-versus-budget curves for every classifier variant and attack.

    Emits one CSV and one SVG per attack kind; returns (records, violations).
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if not cfg.r_grid:
        raise ExperimentError("robust_curve mode needs a nonempty r_grid")
    h = config_hash(cfg)
    labeled_count = cfg.labeled_counts[0] if cfg.labeled_counts else None

    def run_seed(seed):
        train, test, val = make_splits(cfg, seed, labeled_count)
        pipe = _pipeline(cfg, train.dim)
        out, viol = [], []
        for variant in cfg.variants:
            cell = _Cell(cfg, variant, train, test, val, seed, pipe)
            out.append(cell.evaluate("none", 0.0, labeled_count or train.n, h))
            for kind in cfg.attacks:
                for r in cfg.r_grid:
                    out.append(cell.evaluate(kind, float(r),
                                             labeled_count or train.n, h))
            viol.extend(cell.violations)
        return out, viol

    results = _parallel(run_seed, list(cfg.seeds))
    records = [rec for recs, _ in results for rec in recs]
    violations = [v for _, viol in results for v in viol]

    write_table(os.path.join(out_dir, f"runlog_curves_{cfg.dataset}.csv"),
                _RECORD_COLUMNS, records_to_rows(records), h)
    grid = (0.0,) + tuple(cfg.r_grid)
    for kind in cfg.attacks:
        rows = []
        for r in grid:
            row = [r]
            for variant in cfg.variants:
                vals = [rec.accuracy for rec in records
                        if rec.variant == variant and rec.r == r
                        and rec.attack in (kind, "none")]
                m, s = _mean_std(vals)
                row += [100 * m, 100 * s]
            rows.append(tuple(row))
        header = ["r"]
        for variant in cfg.variants:
            header += [f"{variant}_mean", f"{variant}_std"]
        stem = os.path.join(out_dir, f"curve_{cfg.dataset}_{kind}")
        write_table(stem + ".csv", header, rows, h)
        series = {variant: [row[1 + 2 * i] for row in rows]
                  for i, variant in enumerate(cfg.variants)}
        _plot_lines(stem + ".svg", h, grid, series,
                    "perturbation budget r", "accuracy (%)",
                    f"{cfg.dataset}: {kind}")
    return records, violations


def run_label_sweep(cfg: ExperimentConfig, out_dir=None):
    """Robust accuracy as the labeled count grows, with rank-trend stats.

    Spearman correlation of mean accuracy against labeled count is reported
    per (variant, attack, budget); a single-size sweep yields "undefined".
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if not cfg.r_grid:
        raise ExperimentError("label_sweep mode needs a nonempty r_grid")
    h = config_hash(cfg)
    sweep_variants = tuple(v for v in cfg.variants if v in ("gl", "knn")) \
        or ("gl", "knn")

    def run_one(args):
        seed, labeled_count = args
        train, test, val = make_splits(cfg, seed, labeled_count)
        pipe = _pipeline(cfg, train.dim)
        out, viol = [], []
        for variant in sweep_variants:
            cell = _Cell(cfg, variant, train, test, val, seed, pipe)
            out.append(cell.evaluate("none", 0.0, labeled_count, h))
            for kind in cfg.attacks:
                for r in cfg.r_grid:
                    out.append(cell.evaluate(kind, float(r), labeled_count, h))
            viol.extend(cell.violations)
        return out, viol

    tasks = [(seed, lc) for lc in cfg.labeled_counts for seed in cfg.seeds]
    results = _parallel(run_one, tasks)
    records = [rec for recs, _ in results for rec in recs]
    violations = [v for _, viol in results for v in viol]

    write_table(os.path.join(out_dir, f"runlog_sweep_{cfg.dataset}.csv"),
                _RECORD_COLUMNS, records_to_rows(records), h)

    mean_rows, trend_rows = [], []
    from scipy.stats import spearmanr
    for variant in sweep_variants:
        for kind in cfg.attacks:
            for r in cfg.r_grid:
                accs = []
                for lc in cfg.labeled_counts:
                    vals = [rec.accuracy for rec in records
                            if rec.variant == variant and rec.attack == kind
                            and rec.r == r and rec.labeled_count == lc]
                    m, s = _mean_std(vals)
                    accs.append(m)
                    mean_rows.append((variant, kind, float(r), lc,
                                      100 * m, 100 * s))
                if len(cfg.labeled_counts) < 2:
                    trend_rows.append((variant, kind, float(r), "undefined"))
                else:
                    rho = spearmanr(cfg.labeled_counts, accs).statistic
                    trend_rows.append((variant, kind, float(r),
                                       float(rho) if math.isfinite(rho)
                                       else "undefined"))
    write_table(os.path.join(out_dir, f"label_sweep_{cfg.dataset}.csv"),
                ["variant", "attack", "r", "labeled_count",
                 "accuracy_mean", "accuracy_std"], mean_rows, h)
    write_table(os.path.join(out_dir,
                             f"label_sweep_trends_{cfg.dataset}.csv"),
                ["variant", "attack", "r", "spearman"], trend_rows, h)

    for kind in cfg.attacks:
        series = {}
        for variant in sweep_variants:
            for r in cfg.r_grid:
                key = f"{variant} r={r:g}"
                series[key] = [row[4] for row in mean_rows
                               if row[0] == variant and row[1] == kind
                               and row[2] == float(r)]
        _plot_lines(
            os.path.join(out_dir, f"label_sweep_{cfg.dataset}_{kind}.svg"),
            h, cfg.labeled_counts, series, "labeled count", "accuracy (%)",
            f"{cfg.dataset}: robustness vs labeled count ({kind})")
    return records, (mean_rows, trend_rows), violations


def run_timing(cfg: ExperimentConfig, out_dir=None):
    """Wall time and allocator peak for graph solve versus plain kNN.

    Only ordering claims are meaningful (absolute numbers are host-specific);
    the returned rows carry booleans for 'solve at least as slow as kNN'.
    The CSV is exempt from the byte-identical rerun guarantee.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    h = config_hash(cfg)
    train, test, _ = make_splits(cfg, cfg.data_seed,
                                 cfg.labeled_counts[0]
                                 if cfg.labeled_counts else None)
    rows = []
    for k in cfg.timing_ks:
        pipe = _pipeline(cfg, train.dim, k_override=k)
        merged = pipe.merge(train, test.points)

        def gl_once():
            g = pipe.build_graph(merged)
            return harmonic_extend(g, merged, pipe.cfg.solver)

        def knn_once():
            return knn_classify(train, test.points, k)

        gl_times, knn_times, iters = [], [], 0
        for _ in range(cfg.timing_repeats):
            t0 = time.perf_counter()
            sol = gl_once()
            gl_times.append(time.perf_counter() - t0)
            iters = sol.iterations
            t0 = time.perf_counter()
            knn_once()
            knn_times.append(time.perf_counter() - t0)

        tracemalloc.start()
        gl_once()
        _, gl_peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        tracemalloc.start()
        knn_once()
        _, knn_peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()

        gl_t = float(np.median(gl_times))
        knn_t = float(np.median(knn_times))
        rows.append((k, gl_t, knn_t, int(gl_peak), int(knn_peak), iters,
                     int(gl_t >= knn_t)))
    write_table(os.path.join(out_dir, f"timing_{cfg.dataset}.csv"),
                ["k", "gl_seconds", "knn_seconds", "gl_peak_bytes",
                 "knn_peak_bytes", "solver_iterations", "gl_ge_knn"],
                rows, h)
    return rows


# ---------------------------------------------------------------------------
# plotting


def _plot_lines(path, cfg_hash, xs, series, xlabel, ylabel, title):
    import matplotlib
    matplotlib.use("svg", force=True)
    import matplotlib.pyplot as plt
    with plt.rc_context({"svg.hashsalt": cfg_hash}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for name, ys in sorted(series.items()):
            ax.plot(list(xs), list(ys), marker="o", markersize=3, label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
