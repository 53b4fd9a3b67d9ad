"""Variant x seed sweeps over one fixed sample split."""

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .container import atomic_write
from .model import build_variant
from .training import evaluate, historical_average_baseline, train

log = logging.getLogger(__name__)

METRIC_KEYS = ("rmse_start", "mape_start", "rmse_end", "mape_end")


@dataclass
class AblationData:
    train: object
    val: object
    test: object
    volume: object = None
    train_range: tuple = None


@dataclass
class AblationRow:
    variant: str
    seed_count: int
    mean: dict
    std: dict
    failed: int = 0

    @property
    def rmse(self):
        return 0.5 * (self.mean["rmse_start"] + self.mean["rmse_end"])


@dataclass
class AblationReport:
    rows: list
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def row(self, variant):
        return next(r for r in self.rows if r.variant == variant)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["variant", "seed_count"]
        for k in METRIC_KEYS:
            header += [k, f"{k}_std"]
        w.writerow(header + ["failed"])
        for r in self.rows:
            cells = [r.variant, r.seed_count]
            for k in METRIC_KEYS:
                cells += [f"{r.mean[k]:.6f}", f"{r.std[k]:.6f}"]
            w.writerow(cells + [r.failed])
        return buf.getvalue()

    def to_text(self):
        head = ["variant", "seeds"] + [f"{k}±std" for k in METRIC_KEYS]
        body = []
        for r in self.rows:
            cells = [r.variant, str(r.seed_count)]
            for k in METRIC_KEYS:
                if k.startswith("mape"):
                    cells.append(f"{100 * r.mean[k]:.2f}±{100 * r.std[k]:.2f}%")
                else:
                    cells.append(f"{r.mean[k]:.3f}±{r.std[k]:.3f}")
            if r.failed:
                cells[0] += f" ({r.failed} failed)"
            body.append(cells)
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head] + body]
        return "\n".join(lines) + "\n"


def summarize(variant, metrics_list, failed=0):
    vals = {k: np.array([getattr(m, k) for m in metrics_list], dtype=float) for k in METRIC_KEYS}
    mean = {k: float(v.mean()) if v.size else float("nan") for k, v in vals.items()}
    std = {k: float(v.std(ddof=1)) if v.size > 1 else 0.0 for k, v in vals.items()}
    return AblationRow(variant, len(metrics_list), mean, std, failed)


def run_cell(variant, seed, data, model_config, train_config, threshold):
    """Train and evaluate one (variant, seed); returns ``(RunRecord, Metrics)``."""
    cfg = replace(model_config, variant=variant)
    model = build_variant(cfg, seed=seed)
    _, record = train(model, data.train, data.val, replace(train_config, seed=seed))
    metrics = evaluate(model, data.test, threshold)
    record.metrics = metrics.to_dict()
    return record, metrics


_WORKER_DATA = None


def _worker(args):
    variant, seed, model_config, train_config, threshold = args
    try:
        return variant, seed, run_cell(variant, seed, _WORKER_DATA, model_config, train_config, threshold), None
    except Exception as exc:  # a failed cell must not stop the sweep
        return variant, seed, None, f"{type(exc).__name__}: {exc}"


def run_ablation(variants, seeds, data, model_config, train_config, out_dir=None, jobs=1,
                 include_ha=False, progress=None):
    """Train every variant with every seed on the same split.

    Rows follow the requested variant order.  When ``out_dir`` is given each
    RunRecord lands in ``out_dir/records/<variant>-seed<seed>.json``.  With
    ``include_ha`` a final ``HA`` row holds the historical-average baseline.
    """
    global _WORKER_DATA
    if not seeds:
        raise ValueError("need at least one seed")
    threshold = train_config.eval_filter_threshold
    cells = [(v, s, model_config, train_config, threshold) for v in variants for s in seeds]
    _WORKER_DATA = data
    results = []
    if jobs > 1:
        import multiprocessing
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            for res in pool.map(_worker, cells):
                results.append(res)
                if progress:
                    progress(*res[:2])
    else:
        for cell in cells:
            res = _worker(cell)
            results.append(res)
            if progress:
                progress(*res[:2])

    report = AblationReport(rows=[])
    per_variant = {v: [] for v in variants}
    failed = {v: 0 for v in variants}
    for variant, seed, out, err in results:
        if err is not None:
            log.error("%s seed %s failed: %s", variant, seed, err)
            failed[variant] += 1
            report.failures.append((variant, seed, err))
            continue
        record, metrics = out
        per_variant[variant].append(metrics)
        report.records.append(record)
        if out_dir:
            atomic_write(os.path.join(out_dir, "records", f"{variant}-seed{seed}.json"), record.to_json())
    for v in variants:
        report.rows.append(summarize(v, per_variant[v], failed[v]))
    if include_ha and data.volume is not None:
        ha, _ = historical_average_baseline(
            data.volume, data.train_range, data.test.regions, data.test.targets,
            data.test.config.intervals_per_day, threshold)
        report.rows.append(summarize("HA", [ha]))
    if out_dir:
        atomic_write(os.path.join(out_dir, "report.csv"), report.to_csv())
        atomic_write(os.path.join(out_dir, "report.txt"), report.to_text())
    return report
