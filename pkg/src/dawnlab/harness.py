"""Seed sweeps over named suites, metric persistence and figure rendering."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dawnlab.buffer import WarmupStrategy
from dawnlab.config import RunConfig, profile
from dawnlab.errors import ConfigError
from dawnlab.trainer import run_dawn

log = logging.getLogger(__name__)

OUT_ENV = "DAWNLAB_OUT"
METRIC_HEADER = ("step", "variant", "seed", "metric", "value")
SUMMARY_HEADER = ("variant", "metric", "step", "n", "mean", "ci_low", "ci_high")
Z95 = 1.96


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass(frozen=True)
class ExperimentSuite:
    name: str
    variants: tuple[RunConfig, ...]
    seeds: tuple[int, ...] = tuple(range(8))
    out_dir: Path | None = None
    suite_seed: int = 0

    def __post_init__(self):
        names = [v.variant for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError(f"variant names must be unique within suite {self.name!r}: {names}")
        if not self.variants:
            raise ConfigError(f"suite {self.name!r} has no variants")
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def root(self) -> Path:
        return Path(self.out_dir) if self.out_dir is not None else default_out_dir() / self.name

    def without(self, variant: str) -> "ExperimentSuite":
        keep = tuple(v for v in self.variants if v.variant != variant)
        return ExperimentSuite(self.name, keep, self.seeds, self.out_dir, self.suite_seed)

    def runs(self):
        """(config, seed index) pairs with the per-run seed already filled in."""
        for cfg in self.variants:
            for idx in self.seeds:
                yield cfg.with_(seed=run_seed(self.suite_seed, idx)), idx


def run_seed(suite_seed: int, index: int) -> int:
    """Split the suite seed; depends only on the seed index, never on the variant."""
    return int(np.random.SeedSequence([suite_seed, index]).generate_state(1, dtype=np.uint32)[0])


# --------------------------------------------------------------------------- canonical suites
def _variants(base: RunConfig, table: dict[str, dict]) -> tuple[RunConfig, ...]:
    return tuple(base.with_(variant=name, **changes) for name, changes in table.items())


def _suite_tables() -> dict[str, dict[str, dict]]:
    no_warm = WarmupStrategy(budget=0)
    return {
        "warmup-quantity": {
            f"M={m // 1000}K": {"warmup": WarmupStrategy(budget=m)} for m in (0, 5000, 10000, 20000, 40000)
        },
        "warmup-strategy": {
            kind: {"warmup": WarmupStrategy(kind)}
            for kind in ("base-only", "full-action", "gaussian-noise", "epsilon-greedy", "tc-noise", "tc-noise-anchor")
        },
        "explicit-warmup": {
            "none": {},
            "soft-auto": {"explicit_warmup": "soft-auto"},
            "soft-fixed": {"explicit_warmup": "soft-fixed"},
            "hard": {"explicit_warmup": "hard"},
        },
        "normalization": {
            "none": {"critic_norm": "none"},
            "layer-norm": {"critic_norm": "layer-norm"},
            "hyperspherical": {"critic_norm": "hyperspherical"},
        },
        "lambda-robustness": {f"lam={lam}": {"lam": lam} for lam in (0.05, 0.1, 0.2, 0.4)},
        "objectives": {
            "mse": {"critic_head": "scalar"},
            "c51": {"critic_head": "c51"},
            "qr": {"critic_head": "quantile"},
            "tqc": {"critic_head": "tqc"},
        },
        "dawn-vs-baselines": {
            "dawn": {},
            "vanilla-residual": {"warmup": no_warm, "critic_norm": "none", "lam": 1.0},
            "progressive": {"warmup": WarmupStrategy(budget=8000), "critic_norm": "none", "progressive_h": 30_000},
        },
        "component-ablation": {
            "dawn": {},
            "no-warmup": {"warmup": no_warm},
            "no-norm": {"critic_norm": "none"},
        },
        "actor-vs-critic-norm": {
            "none": {"critic_norm": "none", "actor_norm": "none"},
            "critic-ln": {"critic_norm": "layer-norm", "actor_norm": "none"},
            "critic-hn": {"critic_norm": "hyperspherical", "actor_norm": "none"},
            "both-ln": {"critic_norm": "layer-norm", "actor_norm": "layer-norm"},
            "both-hn": {"critic_norm": "hyperspherical", "actor_norm": "hyperspherical"},
        },
    }


SUITES = tuple(_suite_tables())


def build_suite(name: str, profile_name: str = "desk", seeds=8, out_dir=None, suite_seed: int = 0,
                **overrides) -> ExperimentSuite:
    tables = _suite_tables()
    if name not in tables:
        raise ConfigError(f"unknown suite {name!r}; known: {', '.join(SUITES)}")
    seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(seeds)
    base = profile(profile_name, **overrides)
    return ExperimentSuite(name, _variants(base, tables[name]), seeds, out_dir, suite_seed)


# --------------------------------------------------------------------------- running
@dataclass
class RunOutcome:
    variant: str
    seed_index: int
    status: str
    error: str | None
    run_dir: Path


@dataclass
class SuiteOutcome:
    root: Path
    summary: Path
    runs: list[RunOutcome] = field(default_factory=list)

    @property
    def failures(self) -> list[RunOutcome]:
        return [r for r in self.runs if r.status != "ok"]

    @property
    def ok(self) -> bool:
        return not self.failures


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_HEADER)
        w.writerows(rows)


def read_metrics(path) -> list[tuple[int, str, int, str, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = tuple(next(r, ()))
        if header != METRIC_HEADER:
            raise ConfigError(f"{path}: expected header {','.join(METRIC_HEADER)}, got {','.join(header)}")
        return [(int(s), v, int(sd), m, float(x)) for s, v, sd, m, x in r]


def _run_one(cfg: RunConfig, seed_index: int, run_dir: str) -> RunOutcome:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    try:
        result = run_dawn(cfg, out_dir=run_dir)
    except Exception as exc:  # a crashed run must not take its siblings down
        log.exception("run %s/%d crashed", cfg.variant, seed_index)
        write_metrics(run_dir / "metrics.csv", [])
        return RunOutcome(cfg.variant, seed_index, "crashed", f"{type(exc).__name__}: {exc}", run_dir)
    rows = ((step, cfg.variant, seed_index, metric, repr(float(value))) for step, metric, value in result.metric_rows())
    write_metrics(run_dir / "metrics.csv", rows)
    return RunOutcome(cfg.variant, seed_index, result.status, result.error, run_dir)


def run_suite(suite: ExperimentSuite, workers: int | None = None) -> SuiteOutcome:
    root = suite.root
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, idx, str(root / cfg.variant / f"seed_{idx}")) for cfg, idx in suite.runs()]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        outcomes = [_run_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, *zip(*jobs)))
    failures = [{"variant": o.variant, "seed": o.seed_index, "status": o.status, "error": o.error}
                for o in outcomes if o.status != "ok"]
    (root / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    summary = root / "summary.csv"
    write_summary(summary, [o.run_dir / "metrics.csv" for o in outcomes])
    return SuiteOutcome(root, summary, outcomes)


# --------------------------------------------------------------------------- statistics
def mean_ci(values) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width over seeds."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no values")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(Z95 * x.std(ddof=1) / math.sqrt(x.size))


def summarize(rows) -> list[tuple]:
    groups: dict[tuple[str, str, int], list[float]] = defaultdict(list)
    for step, variant, _seed, metric, value in rows:
        groups[(variant, metric, step)].append(value)
    out = []
    for (variant, metric, step), vals in sorted(groups.items()):
        m, h = mean_ci(vals)
        out.append((variant, metric, step, len(vals), m, m - h, m + h))
    return out


def write_summary(path, metric_files) -> None:
    rows = []
    for f in metric_files:
        if Path(f).exists():
            rows.extend(read_metrics(f))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for variant, metric, step, n, m, lo, hi in summarize(rows):
            w.writerow([variant, metric, step, n, repr(m), repr(lo), repr(hi)])


def read_summary(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        missing = [c for c in SUMMARY_HEADER if c not in (r.fieldnames or [])]
        if missing:
            raise ConfigError(f"{path}: summary is missing columns {missing}")
        return list(r)


# --------------------------------------------------------------------------- plotting
@dataclass(frozen=True)
class FigureSpec:
    metric: str
    title: str
    ylabel: str
    variants: tuple[str, ...] | None = None


FIGURES = {
    "success": FigureSpec("success_rate", "Evaluation success", "success rate"),
    "grounding": FigureSpec("grounding_error", "Grounding error on anchor states", "mean |Q - G|"),
    "sensitivity": FigureSpec("sensitivity", "Critic sensitivity to the residual", "mean ||dQ/da_res||"),
    "value-difference": FigureSpec("value_difference", "Value difference", "mean |Q(full) - Q(base)|"),
    "alpha": FigureSpec("alpha", "Entropy temperature", "alpha"),
    "q-anchor": FigureSpec("q_anchor_mean", "Critic mean on anchor states", "Q"),
    "critic-loss": FigureSpec("critic_loss", "Critic loss", "loss"),
}


def plot(summary_path, fig: str, out_dir=None) -> Path:
    """Render one figure spec from a summary.csv to an SVG file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if fig not in FIGURES:
        raise ConfigError(f"unknown figure {fig!r}; known: {', '.join(FIGURES)}")
    spec = FIGURES[fig]
    rows = [r for r in read_summary(summary_path) if r["metric"] == spec.metric]
    series: dict[str, list[tuple[int, float, float, float]]] = defaultdict(list)
    for r in rows:
        if spec.variants is None or r["variant"] in spec.variants:
            series[r["variant"]].append((int(r["step"]), float(r["mean"]), float(r["ci_low"]), float(r["ci_high"])))

    out_dir = Path(out_dir) if out_dir is not None else Path(summary_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{fig}.svg"
    with matplotlib.rc_context({"svg.hashsalt": "dawnlab", "svg.fonttype": "none", "path.simplify": False}):
        f, ax = plt.subplots(figsize=(6, 4))
        if not series:
            ax.text(0.5, 0.5, f"no data for {spec.metric}", ha="center", va="center", transform=ax.transAxes)
        for variant in sorted(series):
            pts = np.array(sorted(series[variant]))
            x, m, lo, hi = pts.T
            assert np.all(hi >= m) and np.all(m >= lo), "CI band must bracket the mean"
            band = ax.fill_between(x, lo, hi, alpha=0.2)
            band.set_gid(f"band:{variant}")
            (line,) = ax.plot(x, m, label=variant, color=band.get_facecolor()[0][:3])
            line.set_gid(f"mean:{variant}")
        ax.set_title(spec.title)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(spec.ylabel)
        if series:
            ax.legend(fontsize=8)
        f.tight_layout()
        f.savefig(path, format="svg", metadata={"Date": None})
        plt.close(f)
    return path
