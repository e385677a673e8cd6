"""Run configuration: one key-value file, overridden by CLI flags.

The config file uses the ``key = value`` format of parse_kv_file. Top-level
keys mirror the CLI flags (dataset, detector, methods, metrics, out, seed,
workers); dotted keys are method or detector parameters passed through to
the consumers verbatim (for example ``rise.n_masks = 100`` or
``detector.tau = 0.4``). Flags always win over file values, so a config file
can describe a whole experiment while the command line varies one knob.
"""

from dataclasses import dataclass, field

from .dataio import parse_kv_file
from .errors import ConfigurationError
from .metrics import METRIC_NAMES, check_metrics
from .runner import METHOD_NAMES

DETECTOR_CHOICES = ("minicnn", "synthetic")
_RUN_KEYS = ("dataset", "detector", "methods", "metrics", "out", "seed",
             "workers")


@dataclass
class RunConfig:
    """Everything a command needs, already validated."""

    dataset: str | None = None
    detector: str = "minicnn"
    methods: tuple = METHOD_NAMES
    metrics: tuple = METRIC_NAMES
    out: str | None = None
    seed: int = 0
    workers: int = 1
    params: dict = field(default_factory=dict)


def _split_list(value) -> tuple:
    if isinstance(value, (tuple, list)):
        return tuple(value)
    parts = [p.strip() for p in str(value).split(",")]
    return tuple(p for p in parts if p)


def _to_int(name: str, value) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}") from None


def load_run_config(config_path=None, **overrides) -> RunConfig:
    """Merge a config file (if any) with flag overrides into a RunConfig.

    ``overrides`` uses the flag names; None values mean "flag not given" and
    defer to the file value or the default. Unknown top-level keys in the
    file are rejected loudly — dotted parameter keys pass through.
    """
    merged = {}
    params = {}
    if config_path is not None:
        for key, value in parse_kv_file(config_path).items():
            if key in _RUN_KEYS:
                merged[key] = value
            elif "." in key:
                params[key] = value
            else:
                raise ConfigurationError(
                    f"unknown config key {key!r} "
                    f"(run keys: {', '.join(_RUN_KEYS)}; "
                    f"parameters use dotted names)")
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value

    cfg = RunConfig(params=params)
    if "dataset" in merged:
        cfg.dataset = str(merged["dataset"])
    if "detector" in merged:
        cfg.detector = str(merged["detector"])
    if "methods" in merged:
        cfg.methods = _split_list(merged["methods"])
    if "metrics" in merged:
        cfg.metrics = _split_list(merged["metrics"])
    if "out" in merged:
        cfg.out = str(merged["out"])
    if "seed" in merged:
        cfg.seed = _to_int("seed", merged["seed"])
    if "workers" in merged:
        cfg.workers = _to_int("workers", merged["workers"])

    if cfg.detector not in DETECTOR_CHOICES:
        raise ConfigurationError(
            f"unknown detector {cfg.detector!r} "
            f"(choices: {', '.join(DETECTOR_CHOICES)})")
    unknown = [m for m in cfg.methods if m not in METHOD_NAMES]
    if unknown:
        raise ConfigurationError(
            f"unknown methods: {', '.join(sorted(unknown))} "
            f"(available: {', '.join(METHOD_NAMES)})")
    check_metrics(cfg.metrics)
    if cfg.workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {cfg.workers}")
    return cfg
