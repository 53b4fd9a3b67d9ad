"""Mini-batch training with early stopping, evaluation metrics and the
historical-average baseline."""

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn.optim import Adam

log = logging.getLogger(__name__)

RUN_RECORD_SCHEMA = 1


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    max_epochs: int = 100
    early_stop_patience: int = 5
    seed: int = 0
    eval_filter_threshold: float = 10.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class Metrics:
    rmse_start: float = 0.0
    mape_start: float = 0.0
    rmse_end: float = 0.0
    mape_end: float = 0.0
    n_evaluated_start: int = 0
    n_evaluated_end: int = 0

    @property
    def empty_start(self):
        return self.n_evaluated_start == 0

    @property
    def empty_end(self):
        return self.n_evaluated_end == 0

    @property
    def rmse(self):
        """Mean of the start and end RMSE; the scalar used to rank variants."""
        return 0.5 * (self.rmse_start + self.rmse_end)

    def to_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    variant: str
    seed: int
    config_digest: str
    history: list = field(default_factory=list)
    best_epoch: int = 0
    metrics: dict = None
    # kept in memory only; persisting it would break byte-identical reruns
    wall_clock: float = 0.0

    def to_json(self):
        doc = {"schema": RUN_RECORD_SCHEMA, "variant": self.variant, "seed": self.seed,
               "config_digest": self.config_digest, "history": self.history,
               "best_epoch": self.best_epoch, "metrics": self.metrics}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema") != RUN_RECORD_SCHEMA:
            raise ValueError(f"unsupported RunRecord schema {doc.get('schema')}")
        return cls(doc["variant"], doc["seed"], doc["config_digest"], doc["history"],
                   doc["best_epoch"], doc["metrics"])


def config_digest(*configs):
    payload = json.dumps([c if isinstance(c, dict) else asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def dataset_loss(model, samples, batch_size=256):
    """Mean per-sample loss in inference mode."""
    if len(samples) == 0:
        return float("nan")
    total = 0.0
    for b in samples.iter_batches(batch_size):
        total += model.loss(b).item() * len(b["target"])
    return total / len(samples)


def train(model, train_set, val_set, cfg, progress=None):
    """Fit ``model`` in place; returns ``(best_state, RunRecord)``.

    After each epoch the validation loss decides whether the parameters are
    the new best; training stops once it fails to improve for
    ``early_stop_patience`` consecutive epochs, and the model is left holding
    the best parameters.  With an empty ``val_set`` the training loss is used.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lr=cfg.learning_rate)
    params = model.parameters()
    record = RunRecord(model.config.variant, cfg.seed, config_digest(model.config, cfg))
    best_state = model.state()
    best_val = math.inf
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for bi, s in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_set.batch(order[s:s + cfg.batch_size])
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = model.loss(batch, training=True, rng=rng)
            except FloatingPointError as exc:
                raise NumericalError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi}")
            Adam.zero_grad(params)
            loss.backward()
            opt.step(params)
            total += value * len(batch["target"])
        train_loss = total / max(len(train_set), 1)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val_loss = dataset_loss(model, val_set) if len(val_set) else train_loss
        except FloatingPointError as exc:
            raise NumericalError(f"validation at epoch {epoch}: {exc}") from exc
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        record.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if progress:
            progress(epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_state, stale = val_loss, model.state(), 0
            record.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.load_state(best_state)
    record.wall_clock = time.perf_counter() - t0
    return best_state, record


# ---------------------------------------------------------------- metrics

def task_metrics(truth, pred, threshold):
    """``(rmse, mape, n)`` over samples whose true value is at least ``threshold``."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    keep = truth >= threshold
    n = int(keep.sum())
    if n == 0:
        return 0.0, 0.0, 0
    err = pred[keep] - truth[keep]
    rmse = float(np.sqrt(np.mean(err ** 2)))
    # zero truths can only survive a threshold <= 0; leave them out of MAPE
    nz = truth[keep] != 0
    mape = float(np.mean(np.abs(err[nz]) / truth[keep][nz])) if nz.any() else 0.0
    return rmse, mape, n


def compute_metrics(true_start, pred_start, true_end, pred_end, threshold=10.0):
    rs, ms, ns = task_metrics(true_start, pred_start, threshold)
    re, me, ne = task_metrics(true_end, pred_end, threshold)
    return Metrics(rs, ms, re, me, ns, ne)


def evaluate(model, test_set, threshold=10.0):
    """RMSE and MAPE on the raw count scale, low-volume samples filtered per task."""
    pred = model.predict(test_set)
    raw = np.stack([test_set.raw_start[test_set.regions, test_set.targets],
                    test_set.raw_end[test_set.regions, test_set.targets]], axis=-1)
    return compute_metrics(raw[:, 0], pred.start_raw, raw[:, 1], pred.end_raw, threshold)


def historical_average_baseline(volume, train_range, regions, targets, intervals_per_day,
                                threshold=10.0, min_weekday_occurrences=2):
    """Predict the training mean for the same region and clock slot.

    The mean is further conditioned on day of week when the training range
    holds at least ``min_weekday_occurrences`` days with that weekday;
    otherwise all days are pooled.  Returns ``(Metrics, predictions [N, 2])``.
    """
    lo, hi = train_range
    ipd = intervals_per_day
    regions = np.asarray(regions)
    targets = np.asarray(targets)
    t_idx = np.arange(lo, hi)
    clock = t_idx % ipd
    weekday = (t_idx // ipd) % 7
    preds = np.zeros((len(targets), 2))
    for ch, series in enumerate((volume.start, volume.end)):
        train = series[:, lo:hi].astype(np.float64)
        region_mean = train.mean(axis=1) if train.shape[1] else np.zeros(series.shape[0])
        for k, (i, t) in enumerate(zip(regions, targets)):
            c, w = t % ipd, (t // ipd) % 7
            same_clock = clock == c
            same_day = same_clock & (weekday == w)
            if same_day.sum() >= min_weekday_occurrences:
                preds[k, ch] = train[i, same_day].mean()
            elif same_clock.any():
                preds[k, ch] = train[i, same_clock].mean()
            else:
                preds[k, ch] = region_mean[i]
    metrics = compute_metrics(volume.start[regions, targets], preds[:, 0],
                              volume.end[regions, targets], preds[:, 1], threshold)
    return metrics, preds
