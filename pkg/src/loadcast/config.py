"""TOML experiment configuration.

Four optional tables: [grid] (houses, models, windows, seeds_per_cell),
[train], [transformer], [recurrent]. Unknown keys are rejected rather than
silently ignored, since a typo like `epochs = 50` under the wrong table
would otherwise change the experiment without warning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .models import MODEL_KINDS, RecurrentSpec, TransformerSpec

__all__ = ["GridConfig", "ExperimentConfig", "load_config", "parse_config", "PAPER_HOUSES"]

# The eight households benchmarked in the source dataset.
PAPER_HOUSES = (
    "MAC000002",
    "MAC000033",
    "MAC000092",
    "MAC000156",
    "MAC000246",
    "MAC000450",
    "MAC001074",
    "MAC003223",
)

_GRID_KEYS = {"houses", "models", "windows", "seeds_per_cell", "split_ratio", "max_readings"}
_TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "optimizer",
               "adam_beta1", "adam_beta2", "adam_eps", "early_stop_patience"}
_TRANSFORMER_KEYS = {"n_layers", "d_model", "n_heads", "d_ff", "dropout_rate"}
_RECURRENT_KEYS = {"hidden_size"}


@dataclass(frozen=True)
class GridConfig:
    houses: tuple[str, ...] = PAPER_HOUSES
    models: tuple[str, ...] = MODEL_KINDS
    windows: tuple[int, ...] = (2, 3, 6, 12)
    seeds_per_cell: int = 5
    split_ratio: float = 0.8
    max_readings: int | None = None

    def __post_init__(self):
        if not self.houses or not self.models or not self.windows:
            raise ConfigError("grid lists must be non-empty")
        for kind in self.models:
            if kind not in MODEL_KINDS:
                raise ConfigError(f"unknown model {kind!r}; choose from {list(MODEL_KINDS)}")
        for n in self.windows:
            if n < 1:
                raise ConfigError(f"window length must be >= 1, got {n}")
        if self.seeds_per_cell < 1:
            raise ConfigError("seeds_per_cell must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.max_readings is not None and self.max_readings < 2:
            raise ConfigError("max_readings must be >= 2 when set")

    @property
    def run_count(self) -> int:
        return len(self.houses) * len(self.models) * len(self.windows) * self.seeds_per_cell


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    train_kwargs: dict = field(default_factory=dict)
    transformer: TransformerSpec = field(default_factory=TransformerSpec)
    recurrent: RecurrentSpec = field(default_factory=RecurrentSpec)


def _check_keys(table: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{where}]: {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def parse_config(doc: dict) -> ExperimentConfig:
    _check_keys(doc, {"grid", "train", "transformer", "recurrent"}, "top level")

    grid_tbl = dict(doc.get("grid", {}))
    _check_keys(grid_tbl, _GRID_KEYS, "grid")
    grid_kwargs = {}
    if "houses" in grid_tbl:
        grid_kwargs["houses"] = tuple(str(h) for h in grid_tbl["houses"])
    if "models" in grid_tbl:
        grid_kwargs["models"] = tuple(str(m) for m in grid_tbl["models"])
    if "windows" in grid_tbl:
        grid_kwargs["windows"] = tuple(int(n) for n in grid_tbl["windows"])
    for key in ("seeds_per_cell", "max_readings"):
        if key in grid_tbl:
            grid_kwargs[key] = int(grid_tbl[key])
    if "split_ratio" in grid_tbl:
        grid_kwargs["split_ratio"] = float(grid_tbl["split_ratio"])

    train_tbl = dict(doc.get("train", {}))
    _check_keys(train_tbl, _TRAIN_KEYS, "train")
    train_kwargs = {}
    for key in ("epochs", "batch_size", "early_stop_patience"):
        if key in train_tbl:
            train_kwargs[key] = int(train_tbl[key])
    for key in ("learning_rate", "adam_beta1", "adam_beta2", "adam_eps"):
        if key in train_tbl:
            train_kwargs[key] = float(train_tbl[key])
    if "optimizer" in train_tbl:
        train_kwargs["optimizer"] = str(train_tbl["optimizer"])

    tf_tbl = dict(doc.get("transformer", {}))
    _check_keys(tf_tbl, _TRANSFORMER_KEYS, "transformer")
    tf_kwargs = {k: (float(v) if k == "dropout_rate" else int(v)) for k, v in tf_tbl.items()}

    rec_tbl = dict(doc.get("recurrent", {}))
    _check_keys(rec_tbl, _RECURRENT_KEYS, "recurrent")
    rec_kwargs = {k: int(v) for k, v in rec_tbl.items()}

    try:
        return ExperimentConfig(
            grid=GridConfig(**grid_kwargs),
            train_kwargs=train_kwargs,
            transformer=TransformerSpec(**tf_kwargs),
            recurrent=RecurrentSpec(**rec_kwargs),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    return parse_config(doc)
