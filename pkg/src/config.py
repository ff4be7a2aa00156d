import json
from pathlib import Path
from typing import Any

from latency.data import SHORTFORM_KINDS, LongKind, MetricKind
from latency.errors import ParseError, ValidationError
from latency.metaeval import DEFAULT_ANOMALY_THRESHOLD, SampleMode
from latency.textproc import LangMode

from .kind import OutputFormat, Subcommand

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "lang_mode": LangMode.space.value,
    "metrics": None,
    "seed": 20250917,
    "n_resamples": 10000,
    "anomaly_threshold": DEFAULT_ANOMALY_THRESHOLD,
    "format": OutputFormat.json.value,
    "seconds": False,
    "fix_monotonic": False,
    "mw_samples": SampleMode.segment.value,
    "jobs": 1,
    "system": None,
    "testset": None,
    "lang_pair": None,
}


def parse_metrics(value: str | list[str]) -> list[str]:
    names = value.split(",") if isinstance(value, str) else list(value)
    names = [name.strip() for name in names if name.strip() != ""]
    known = {kind.value for kind in MetricKind} | {kind.value for kind in LongKind}
    for name in names:
        if name not in known:
            raise ValidationError(f"Unknown metric '{name}', expected one of {', '.join(sorted(known))}")
    if not names:
        raise ValidationError("No metric requested")
    return names


class RunConfig:
    """Settings of one run. Explicit values win over the optional JSON config file, which wins over the defaults."""

    def __init__(
        self,
        subcommand: Subcommand,
        config_file: Path | None = None,
        inputs: dict[str, Any] | None = None,
        **overrides: Any,
    ):
        if config_file is not None:
            try:
                self.config = json.loads(config_file.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ParseError(f"Malformed config file {config_file}: {e.msg}", e.lineno) from e
            if not isinstance(self.config, dict):
                raise ValidationError(f"Config file {config_file} must hold a JSON object")
        else:
            self.config = {}

        unknown = (set(self.config) | set(overrides)) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        self.overrides = overrides

        self.subcommand = subcommand
        self.inputs = {key: value for key, value in (inputs or {}).items() if value is not None}

        self.lang_mode = LangMode(self.get_config_value("lang_mode"))
        metrics = self.get_config_value("metrics")
        self.metrics = parse_metrics(metrics) if metrics is not None else None
        self.seed = int(self.get_config_value("seed"))
        self.n_resamples = int(self.get_config_value("n_resamples"))
        self.anomaly_threshold = float(self.get_config_value("anomaly_threshold"))
        self.format = OutputFormat(self.get_config_value("format"))
        self.seconds = bool(self.get_config_value("seconds"))
        self.fix_monotonic = bool(self.get_config_value("fix_monotonic"))
        self.mw_samples = SampleMode(self.get_config_value("mw_samples"))
        self.jobs = int(self.get_config_value("jobs"))
        self.system = self.get_config_value("system")
        self.testset = self.get_config_value("testset")
        self.lang_pair = self.get_config_value("lang_pair")

        if self.seed < 0:
            raise ValidationError(f"Seed must be non-negative, got {self.seed}")
        if self.n_resamples < 1:
            raise ValidationError(f"Bootstrap needs at least one resample, got {self.n_resamples}")
        if self.anomaly_threshold < 0:
            raise ValidationError(f"Anomaly threshold must be non-negative, got {self.anomaly_threshold}")
        if self.jobs == 0:
            raise ValidationError("jobs must not be 0 (use -1 for all cores)")

        self.p_templates = Path(__file__).resolve().parent.parent / "templates"

    def get_config_value(self, key: str):
        if self.overrides.get(key) is not None:
            value = self.overrides[key]
        elif key in self.config:
            value = self.config[key]
        else:
            value = DEFAULTS[key]
        # Enum members come from the CLI, plain strings from the config file.
        return value.value if isinstance(value, LangMode | OutputFormat | SampleMode) else value

    def metric_kinds(self) -> list[MetricKind]:
        """Requested short-form kinds, all of them by default."""
        if self.metrics is None:
            return list(SHORTFORM_KINDS)
        kinds = []
        for name in self.metrics:
            if name not in {kind.value for kind in SHORTFORM_KINDS}:
                raise ValidationError(f"{name} is not a short-form metric; use one of AP, AL, LAAL, DAL, ATD, YAAL")
            kinds.append(MetricKind(name))
        return kinds

    def resolved(self) -> dict[str, Any]:
        return {
            "subcommand": self.subcommand.value,
            "inputs": {
                key: [str(v) for v in value] if isinstance(value, list) else str(value)
                for key, value in self.inputs.items()
            },
            "lang_mode": self.lang_mode.value,
            "metrics": self.metrics,
            "seed": self.seed,
            "n_resamples": self.n_resamples,
            "anomaly_threshold": self.anomaly_threshold,
            "format": self.format.value,
            "seconds": self.seconds,
            "fix_monotonic": self.fix_monotonic,
            "mw_samples": self.mw_samples.value,
            "jobs": self.jobs,
        }
