"""Glue from volume/flow tensors to train/val/test sample sets."""

from .ablation import AblationData
from .data.samples import make_samples, split_train_val
from .data.tensors import ConfigError, fit_normalizer


def resolve_train_days(data_cfg, time_spec):
    days = time_spec.m // time_spec.intervals_per_day
    train_days = data_cfg.train_days or round(days * 2 / 3)
    if not 0 < train_days < days:
        raise ConfigError(f"train_days={train_days} must leave test days in a {days}-day horizon")
    return train_days


def prepare_split(volume, flows, model_cfg, data_cfg, externals=None):
    """Normaliser fitted on the training days, then train/val/test sample sets.

    Training targets are the first ``train_days`` days (minus the history
    warm-up); the last ``1 - val_fraction`` of them validate.  All later
    targets form the test set.  Returns ``(AblationData, Normalizer)``.
    """
    time_spec = volume.time
    ipd = time_spec.intervals_per_day
    if model_cfg.intervals_per_day != ipd:
        raise ConfigError(f"model expects {model_cfg.intervals_per_day} intervals/day, data has {ipd}")
    train_end = resolve_train_days(data_cfg, time_spec) * ipd
    normalizer = fit_normalizer(volume, flows, (0, train_end))
    samples = make_samples(volume, flows, normalizer, model_cfg.sample_config(), externals=externals)
    trainval = samples.subset(samples.targets < train_end)
    test = samples.subset(samples.targets >= train_end)
    if len(trainval) == 0:
        raise ConfigError("no training targets: the training days do not cover the history warm-up")
    train, val = split_train_val(trainval, data_cfg.val_fraction)
    return AblationData(train, val, test, volume, (0, train_end)), normalizer
