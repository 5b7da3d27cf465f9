"""Labeled-fraction sweeps: config parsing, runs, evaluation and aggregation.

Config grammar: one ``key = value`` per line, ``#`` starts a comment, list
values are comma separated. Keys::

    dataset.source          synthetic | directory
    dataset.path            dataset root (directory source), relative to the config file
    dataset.count           synthetic sample count            (500)
    dataset.side            image side after preprocessing    (64)
    dataset.classes         class count                       (2)
    dataset.seed            synthetic generator seed          (0)
    dataset.center_jitter   synthetic center spread           (0.15)
    methods                 subset of S4MTL, S2MTL, UMTL, UNET, CONVNET
    fractions               labeled fractions for every method, from 0.05, 0.1, 0.2, 0.3, 0.5
    fractions.<METHOD>      per-method override (1.0 allowed for UMTL/UNET/CONVNET)
    seeds                   run seeds                         (0, 1, 2)
    split.val_fraction      (0.1)
    split.test_fraction     (0.2)
    split.seed              seed of the shared validation/test holdout (0)
    trainer.<field>         any TrainerConfig field, plus alpha / lambda_adv / lambda_self
    model.<field>           base_channels, depth, convs_per_block, dropout_rate,
                            disc_depth, disc_base_channels, disc_dropout_rate
    output                  results directory, relative to the config file
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import shutil
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import (MAX_LABELED_FRACTION, load_dataset, make_synthetic, stratified_split,
                   write_manifest)
from .losses import LossWeights
from .metrics import classification_metrics, segmentation_metrics
from .models import METHODS, DiscriminatorConfig, GeneratorConfig, ModelParams
from .stats import (bland_altman, independent_t, one_way_anova, paired_t, pearson,
                    wilcoxon_signed_rank)
from .trainer import TrainerConfig, predict, train_baseline, write_history

log = logging.getLogger(__name__)

SEMI = ("S4MTL", "S2MTL")
TABLE_ORDER = ("UNET", "CONVNET", "UMTL", "S2MTL", "S4MTL")  # single-task block first
REFERENCE = ("S4MTL", 0.5)
ALLOWED_FRACTIONS = (0.05, 0.1, 0.2, 0.3, 0.5)
SEG_COLUMNS = ["DS", "JI", "SSIM", "HD", "Prec", "Rec"]
AGGREGATE_ID = "__aggregate__"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    source: str = "synthetic"
    path: Path | None = None
    count: int = 500
    side: int = 64
    classes: int = 2
    data_seed: int = 0
    center_jitter: float = 0.15
    methods: list[str] = field(default_factory=lambda: ["S4MTL"])
    fractions: list[float] = field(default_factory=lambda: [0.1])
    method_fractions: dict[str, list[float]] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    split_seed: int = 0
    trainer: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    output: Path = Path("runs")

    def fractions_for(self, method: str) -> list[float]:
        return self.method_fractions.get(method, self.fractions)

    def runs(self) -> list[tuple[str, float, int]]:
        return [(m, f, s) for m in self.methods for f in self.fractions_for(m) for s in self.seeds]

    def generator_config(self) -> GeneratorConfig:
        m = self.model
        return GeneratorConfig(input_side=self.side, depth=m.get("depth", 3),
                               base_channels=m.get("base_channels", 16),
                               dropout_rate=m.get("dropout_rate", 0.4),
                               convs_per_block=m.get("convs_per_block", 2))

    def discriminator_config(self) -> DiscriminatorConfig:
        m = self.model
        return DiscriminatorConfig(input_side=self.side, class_count=self.classes,
                                   depth=m.get("disc_depth", 4),
                                   base_channels=m.get("disc_base_channels", 16),
                                   dropout_rate=m.get("disc_dropout_rate", 0.0))

    def trainer_config(self, method: str, seed: int) -> TrainerConfig:
        t = dict(self.trainer)
        w = {k: t.pop(k) for k in ("alpha", "lambda_adv", "lambda_self") if k in t}
        return TrainerConfig(method=method, seed=seed, weights=LossWeights(**w), **t)


def run_id(method: str, fraction: float, seed: int) -> str:
    return f"{method}-f{fraction:g}-s{seed}"


# -- parsing -------------------------------------------------------------------

_TRAINER_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainerConfig)
                   if f.name not in ("method", "seed", "weights")}
_MODEL_INT = {"base_channels", "depth", "convs_per_block", "disc_depth", "disc_base_channels"}
_MODEL_FLOAT = {"dropout_rate", "disc_dropout_rate"}


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(v: str, conv) -> list:
    items = [x.strip() for x in v.split(",") if x.strip()]
    if not items:
        raise ValueError("empty list")
    return [conv(x) for x in items]


def _optional_int(v: str):
    return None if v.lower() == "none" else int(v)


def _trainer_value(key: str, v: str):
    if key in ("alpha", "lambda_adv", "lambda_self"):
        return float(v)
    if key not in _TRAINER_FIELDS:
        raise KeyError(key)
    typ = str(_TRAINER_FIELDS[key])
    if typ == "bool":
        return _bool(v)
    if typ == "int":
        return int(v)
    if "int | None" in typ:
        return _optional_int(v)
    if typ == "float":
        return float(v)
    return v


def parse_config(text: str, origin: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate; errors carry ``origin:line:`` anchors."""
    base_dir = Path(base_dir) if base_dir else Path.cwd()
    cfg = ExperimentConfig()
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{origin}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key in lines:
            raise ConfigError(f"{where}: duplicate key '{key}' (first on line {lines[key]})")
        lines[key] = lineno
        try:
            _apply(cfg, key, value, base_dir)
        except KeyError:
            raise ConfigError(f"{where}: unknown key '{key}'") from None
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: bad value for '{key}': {exc}") from None
    _cross_check(cfg, lines, origin)
    return cfg


def _apply(cfg: ExperimentConfig, key: str, value: str, base_dir: Path) -> None:
    if key == "dataset.source":
        if value not in ("synthetic", "directory"):
            raise ConfigError(f"dataset.source must be 'synthetic' or 'directory', got {value!r}")
        cfg.source = value
    elif key == "dataset.path":
        cfg.path = (base_dir / value).resolve()
    elif key in ("dataset.count", "dataset.side", "dataset.classes", "dataset.seed"):
        attr = {"dataset.count": "count", "dataset.side": "side", "dataset.classes": "classes",
                "dataset.seed": "data_seed"}[key]
        setattr(cfg, attr, int(value))
    elif key == "dataset.center_jitter":
        cfg.center_jitter = float(value)
    elif key == "methods":
        methods = _list(value, str)
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method '{m}' (choose from {', '.join(METHODS)})")
        cfg.methods = methods
    elif key == "fractions":
        cfg.fractions = _list(value, float)
    elif key.startswith("fractions."):
        m = key.split(".", 1)[1]
        if m not in METHODS:
            raise ConfigError(f"{key}: unknown method '{m}'")
        cfg.method_fractions[m] = _list(value, float)
    elif key == "seeds":
        cfg.seeds = _list(value, int)
    elif key == "split.val_fraction":
        cfg.val_fraction = float(value)
    elif key == "split.test_fraction":
        cfg.test_fraction = float(value)
    elif key == "split.seed":
        cfg.split_seed = int(value)
    elif key.startswith("trainer."):
        sub = key.split(".", 1)[1]
        cfg.trainer[sub] = _trainer_value(sub, value)
    elif key.startswith("model."):
        sub = key.split(".", 1)[1]
        if sub in _MODEL_INT:
            cfg.model[sub] = int(value)
        elif sub in _MODEL_FLOAT:
            cfg.model[sub] = float(value)
        else:
            raise KeyError(key)
    elif key == "output":
        cfg.output = (base_dir / value).resolve()
    else:
        raise KeyError(key)


def _cross_check(cfg: ExperimentConfig, lines: dict[str, int], origin: str) -> None:
    def err(key, msg):
        at = f"{origin}:{lines[key]}" if key in lines else origin
        raise ConfigError(f"{at}: {msg}")

    if cfg.source == "directory" and cfg.path is None:
        err("dataset.source", "dataset.path is required for a directory source")
    for m in cfg.methods:
        key = f"fractions.{m}" if m in cfg.method_fractions else "fractions"
        for f in cfg.fractions_for(m):
            if f <= 0:
                err(key, f"fraction {f} must be positive")
            if m in SEMI and f > MAX_LABELED_FRACTION:
                err(key, f"fraction {f} for {m} exceeds 50% cap")
            if m not in SEMI and f > MAX_LABELED_FRACTION and f != 1.0:
                err(key, f"fraction {f} exceeds 50% cap (only 1.0 is allowed above it)")
            if f not in ALLOWED_FRACTIONS and f != 1.0:
                grid = ", ".join(f"{a:g}" for a in ALLOWED_FRACTIONS)
                err(key, f"fraction {f} not in the sweep grid {grid}")
    for m in cfg.method_fractions:
        if m not in cfg.methods:
            err(f"fractions.{m}", f"{m} is not listed in methods")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        err("seeds", "duplicate seeds")
    ids = [run_id(*r) for r in cfg.runs()]
    if len(set(ids)) != len(ids):
        err("fractions", "duplicate (method, fraction, seed) runs")
    if cfg.val_fraction < 0 or cfg.test_fraction <= 0 or cfg.val_fraction + cfg.test_fraction >= 1:
        err("split.test_fraction", "need val_fraction >= 0, test_fraction > 0, and their sum < 1")
    try:
        cfg.generator_config()
        cfg.discriminator_config()
        for m in cfg.methods:
            cfg.trainer_config(m, 0)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse_config(text, origin=str(path), base_dir=path.parent)


def validate(path) -> str:
    load_config(path)
    return "ok"


# -- evaluation ----------------------------------------------------------------

TEST_COLUMNS = ["id", *SEG_COLUMNS, "true_class", "pred_class", "truth_pixels", "pred_pixels"]


def evaluate(params: ModelParams, samples, class_count: int) -> list[dict]:
    """Per-sample rows plus one aggregate row (means, accuracy, per-class F1)."""
    fg, cls = predict(params, samples)
    rows = []
    for i, s in enumerate(samples):
        row = {"id": s.id, "true_class": s.label, "truth_pixels": int((s.mask[..., 1] > 0.5).sum())}
        if fg is not None:
            row.update(segmentation_metrics(s.mask, fg[i]).as_dict())
            row["pred_pixels"] = int((fg[i] > 0.5).sum())
        if cls is not None:
            row["pred_class"] = int(cls[i])
        rows.append(row)
    agg = {"id": AGGREGATE_ID}
    if fg is not None:
        for c in SEG_COLUMNS:
            agg[c] = float(np.mean([r[c] for r in rows]))
    if cls is not None:
        cm = classification_metrics(cls, [s.label for s in samples], class_count)
        agg["accuracy"] = cm.accuracy
        for c, v in enumerate(cm.f1):
            agg[f"F1_{c}"] = float(v)
    rows.append(agg)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_test_metrics(rows: list[dict], path, class_count: int) -> None:
    cols = TEST_COLUMNS + ["accuracy"] + [f"F1_{c}" for c in range(class_count)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- running -------------------------------------------------------------------

def load_samples(cfg: ExperimentConfig):
    if cfg.source == "synthetic":
        return make_synthetic(cfg.count, cfg.side, cfg.classes, cfg.data_seed, cfg.center_jitter)
    return load_dataset(cfg.path, cfg.classes, target_side=cfg.side)


def run_one(cfg: ExperimentConfig, samples, method: str, fraction: float, seed: int, run_dir: Path) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    cap = 1.0 if method not in SEMI else MAX_LABELED_FRACTION
    split = stratified_split(samples, fraction, cfg.val_fraction, cfg.test_fraction, seed=seed,
                             class_count=cfg.classes, max_labeled_fraction=cap,
                             holdout_seed=cfg.split_seed)
    write_manifest(split, run_dir / "manifest.csv")
    tcfg = cfg.trainer_config(method, seed)
    t0 = time.perf_counter()
    params, history = train_baseline(split, tcfg, cfg.generator_config(), cfg.discriminator_config())
    write_history(history, run_dir)
    rows = evaluate(params, split.test, cfg.classes)
    write_test_metrics(rows, run_dir / "test_metrics.csv", cfg.classes)
    save_checkpoint(params, history, run_dir / f"ckpt-{history.best_epoch}.npz")
    with open(run_dir / "timing.csv", "w") as fh:
        fh.write("epoch,seconds\n")
        for e, sec in enumerate(history.epoch_seconds):
            fh.write(f"{e},{sec:.3f}\n")
        fh.write(f"total,{time.perf_counter() - t0:.3f}\n")
    return run_dir


@dataclass
class RunSummary:
    completed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 2 if self.failed else 0


def run(config_path, force: bool = False, resume: bool = False) -> RunSummary:
    """Every (method, fraction, seed) run, then the aggregate tables.

    Existing run directories are never overwritten unless ``force``;
    ``resume`` keeps completed runs and only fills in missing ones.
    """
    cfg = load_config(config_path)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(config_path, out / "config.txt")
    samples = load_samples(cfg)
    summary = RunSummary()
    for method, fraction, seed in cfg.runs():
        rid = run_id(method, fraction, seed)
        run_dir = out / rid
        if run_dir.exists():
            complete = (run_dir / "test_metrics.csv").exists()
            if resume and complete:
                summary.skipped.append(rid)
                continue
            if not force and not resume:
                summary.failed[rid] = "run directory exists (use force or resume)"
                continue
            shutil.rmtree(run_dir)
        try:
            log.info("run %s", rid)
            run_one(cfg, samples, method, fraction, seed, run_dir)
            summary.completed.append(rid)
        except Exception as exc:  # one failed run must not stop the sweep
            log.exception("run %s failed", rid)
            summary.failed[rid] = f"{type(exc).__name__}: {exc}"
    aggregate(out, cfg.classes)
    (out / "failures.txt").unlink(missing_ok=True)
    if summary.failed:
        with open(out / "failures.txt", "w") as fh:
            for rid, msg in sorted(summary.failed.items()):
                fh.write(f"{rid}\t{msg}\n")
    return summary


# -- aggregation -----------------------------------------------------------------

def parse_run_id(name: str):
    try:
        method, f, s = name.rsplit("-", 2)
        if method in METHODS and f.startswith("f") and s.startswith("s"):
            return method, float(f[1:]), int(s[1:])
    except ValueError:
        pass
    return None


def collect_runs(results_dir) -> tuple[dict, list[str]]:
    """``{(method, fraction): {seed: rows}}`` from complete runs, plus incomplete run names."""
    runs: dict = defaultdict(dict)
    missing = []
    for d in sorted(Path(results_dir).iterdir()):
        key = parse_run_id(d.name) if d.is_dir() else None
        if key is None:
            continue
        path = d / "test_metrics.csv"
        if not path.exists():
            missing.append(d.name)
            continue
        runs[key[:2]][key[2]] = read_csv(path)
    return dict(runs), missing


def _num(v: str):
    return float(v) if v not in ("", None) else None


def _order(keys):
    return sorted(keys, key=lambda k: (TABLE_ORDER.index(k[0]), -k[1]))


def results_table(runs: dict, class_count: int) -> tuple[list[str], list[list]]:
    """Seed-mean of each run's aggregate row, one row per (method, fraction)."""
    metric_cols = SEG_COLUMNS + ["accuracy"] + [f"F1_{c}" for c in range(class_count)]
    header = ["method", "fraction", "seeds"] + metric_cols
    table = []
    for key in _order(runs):
        per_seed = runs[key]
        aggs = [next(r for r in rows if r["id"] == AGGREGATE_ID) for _, rows in sorted(per_seed.items())]
        row = [key[0], key[1], len(aggs)]
        for c in metric_cols:
            vals = [_num(a.get(c)) for a in aggs]
            vals = [v for v in vals if v is not None]
            row.append(float(np.mean(vals)) if vals else None)
        table.append(row)
    return header, table


def per_sample(runs: dict, key, column: str) -> dict[str, float]:
    """Seed-mean of a per-sample column, keyed by sample id."""
    acc: dict[str, list[float]] = defaultdict(list)
    for _, rows in sorted(runs[key].items()):
        for r in rows:
            if r["id"] != AGGREGATE_ID and r.get(column) not in ("", None):
                acc[r["id"]].append(float(r[column]))
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


def _true_classes(runs: dict, key) -> dict[str, int]:
    rows = next(iter(runs[key].values()))
    return {r["id"]: int(r["true_class"]) for r in rows if r["id"] != AGGREGATE_ID}


def statistics(runs: dict) -> list[dict]:
    """S4MTL@0.5 against every other configuration, plus its class-wise robustness."""
    out = []
    if REFERENCE not in runs:
        return out
    ref = per_sample(runs, REFERENCE, "DS")
    if not ref:
        return out
    for key in _order(runs):
        if key == REFERENCE:
            continue
        other = per_sample(runs, key, "DS")
        ids = [i for i in ref if i in other]
        if len(ids) < 5:
            continue
        a = np.array([ref[i] for i in ids])
        b = np.array([other[i] for i in ids])
        name = f"S4MTL-0.5 vs {key[0]}-{key[1]:g}"
        for rep in (paired_t(a, b), wilcoxon_signed_rank(a, b), one_way_anova([a, b])):
            out.append({"comparison": name, **rep.row()})
    classes = _true_classes(runs, REFERENCE)
    groups = defaultdict(list)
    for i, v in ref.items():
        groups[classes[i]].append(v)
    groups = [np.array(groups[c]) for c in sorted(groups)]
    name = "S4MTL-0.5 class-wise Dice"
    if len(groups) >= 2 and all(len(g) >= 2 for g in groups):
        out.append({"comparison": name, **one_way_anova(groups).row()})
        if len(groups) == 2:
            out.append({"comparison": name, **independent_t(*groups).row()})
    truth = per_sample(runs, REFERENCE, "truth_pixels")
    pred = per_sample(runs, REFERENCE, "pred_pixels")
    ids = [i for i in truth if i in pred]
    t = np.array([truth[i] for i in ids])
    p = np.array([pred[i] for i in ids])
    name = "S4MTL-0.5 pixel counts"
    out.append({"comparison": name, **pearson(t, p).row()})
    out.append({"comparison": name, **bland_altman(t, p).row()})
    return out


def format_table(header, rows) -> str:
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append(["-" if v is None else f"{v:.3f}" if isinstance(v, float) and h != "fraction"
                      else f"{v:g}" if isinstance(v, float) else str(v) for h, v in zip(header, r)])
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if j and i > 0 else c.ljust(w) for i, (c, w) in
                               enumerate(zip(row, widths))).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def aggregate(results_dir, class_count: int | None = None) -> dict:
    """Write ``results.csv``, ``results.txt`` and ``stats.csv``."""
    results_dir = Path(results_dir)
    runs, missing = collect_runs(results_dir)
    if class_count is None:
        class_count = _infer_class_count(runs)
    header, table = results_table(runs, class_count)
    with open(results_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in table:
            w.writerow([_cell(v) for v in r])
    (results_dir / "results.txt").write_text(format_table(header, table))
    stats_rows = statistics(runs)
    cols = ["comparison", "test", "statistic", "p_value", "degenerate", "mean_diff", "loa_low",
            "loa_high", "r"]
    with open(results_dir / "stats.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in stats_rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    return {"runs": runs, "missing": missing, "header": header, "table": table, "stats": stats_rows,
            "class_count": class_count}


def _infer_class_count(runs: dict) -> int:
    for per_seed in runs.values():
        for rows in per_seed.values():
            return sum(1 for k in rows[0] if k.startswith("F1_")) or 2
    return 2
