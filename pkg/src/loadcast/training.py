"""Loss, optimizers, the seeded training loop, and the experiment grid.

A run is fully determined by its seed: weight init, batch shuffling and
dropout masks all come from substreams of the run seed, and per-run seeds
are derived by hashing (base seed, house, model, n, replicate), so the grid
gives identical results regardless of execution order or worker count.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .data import MinMaxScaler, WindowedDataset, fit_apply_scaler, split_train_test, windows_from_values
from .errors import (
    CheckpointError,
    EmptyInputError,
    SchemaError,
    ShapeError,
    TrainingDivergedError,
)
from .evaluation import mape
from .models import MODEL_KINDS, RecurrentSpec, TransformerSpec, build_forecaster
from .models.params import load_checkpoint, save_checkpoint
from .rng import derive_seed, make_rng

__all__ = [
    "TrainSpec",
    "ExperimentResult",
    "RunFailure",
    "GridOutcome",
    "TrainResult",
    "RunTask",
    "build_grid_tasks",
    "execute_run",
    "execute_run_detailed",
    "mse_loss",
    "Adam",
    "SGD",
    "train_model",
    "evaluate_test_mape",
    "run_single",
    "run_grid",
    "write_results_csv",
    "read_results_csv",
    "save_run_checkpoint",
    "load_run_checkpoint",
]

RESULTS_CSV_HEADER = ["model", "n", "house", "seed", "mape_percent", "train_seconds"]


@dataclass(frozen=True)
class TrainSpec:
    """Optimization hyperparameters for one run."""

    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    early_stop_patience: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if not self.adam_eps > 0.0:
            raise ValueError("adam_eps must be > 0")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1 when set")


@dataclass(frozen=True)
class ExperimentResult:
    """One grid run: its coordinates plus test MAPE and wall-clock seconds."""

    model_kind: str
    n: int
    house_id: str
    seed: int
    test_mape_percent: float
    train_seconds: float


@dataclass(frozen=True)
class RunFailure:
    model_kind: str
    n: int
    house_id: str
    seed: int
    error: str


@dataclass
class GridOutcome:
    results: list[ExperimentResult]
    failures: list[RunFailure] = field(default_factory=list)


@dataclass
class TrainResult:
    loss_curve: list[float]
    train_seconds: float
    stopped_epoch: Optional[int] = None


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error; target may be a Tensor or a plain array."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes disagree: {pred.shape} vs {target.shape}")
    diff = ad.sub(pred, target)
    return ad.mean_all(ad.mul(diff, diff))


class Adam:
    """Adam with bias-corrected moments and a hard per-coordinate step bound.

    The corrected ratio m_hat/(sqrt(v_hat)+eps) is clipped to [-1, 1] before
    scaling by the learning rate, so no coordinate ever moves by more than
    ``lr`` in a single step. Plain Adam exceeds that on gradient sequences
    whose magnitude drops sharply (the momentum numerator outlives the
    variance denominator); the clip is inactive otherwise.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params.items())
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {path: np.zeros_like(t.data) for path, t in self.params}
        self.v = {path: np.zeros_like(t.data) for path, t in self.params}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for path, t in self.params:
            g = t.grad
            if g is None:
                continue
            m = self.m[path] = b1 * self.m[path] + (1.0 - b1) * g
            v = self.v[path] = b2 * self.v[path] + (1.0 - b2) * (g * g)
            ratio = np.clip((m / bias1) / (np.sqrt(v / bias2) + self.eps), -1.0, 1.0)
            # Out-of-place update keeps arrays saved by backward closures valid.
            t.data = t.data - self.lr * ratio


class SGD:
    """Plain gradient descent, for comparison runs."""

    def __init__(self, params, lr: float):
        self.params = list(params.items())
        self.lr = lr

    def step(self) -> None:
        for _, t in self.params:
            if t.grad is not None:
                t.data = t.data - self.lr * t.grad


def _make_optimizer(model, spec: TrainSpec):
    if spec.optimizer == "adam":
        return Adam(model.params, spec.learning_rate, spec.adam_beta1, spec.adam_beta2,
                    spec.adam_eps)
    return SGD(model.params, spec.learning_rate)


def _eval_mse(model, ds: WindowedDataset) -> float:
    preds = model.predict_batch(ds.inputs)
    return float(np.mean((preds - ds.targets) ** 2))


def train_model(
    model,
    train_ds: WindowedDataset,
    spec: TrainSpec,
    *,
    val_ds: Optional[WindowedDataset] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Mini-batch training over scaled pairs.

    Records the per-epoch mean training loss; wall-clock covers the
    optimization loop only. When ``spec.early_stop_patience`` is set and a
    validation set is supplied, training stops after that many epochs
    without validation improvement and the best parameters are restored.
    """
    if len(train_ds) == 0:
        raise EmptyInputError("training set is empty")
    shuffle_rng = make_rng(spec.seed, "shuffle")
    dropout_rng = make_rng(spec.seed, "dropout")
    optimizer = _make_optimizer(model, spec)

    count = len(train_ds)
    curve: list[float] = []
    stopped_epoch: Optional[int] = None
    best_val = np.inf
    best_values = None
    bad_epochs = 0
    use_early_stop = spec.early_stop_patience is not None and val_ds is not None

    start = time.perf_counter()
    for epoch in range(spec.epochs):
        order = shuffle_rng.permutation(count)
        total = 0.0
        for lo in range(0, count, spec.batch_size):
            idx = order[lo:lo + spec.batch_size]
            with Graph() as graph:
                pred = model.forward(train_ds.inputs[idx], dropout_rng=dropout_rng)
                loss = mse_loss(pred, train_ds.targets[idx])
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"loss became {loss_value} at epoch {epoch}, batch offset {lo}"
                )
            graph.backward(loss)
            optimizer.step()
            total += loss_value * len(idx)
        epoch_loss = total / count
        curve.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        if use_early_stop:
            val_loss = _eval_mse(model, val_ds)
            if val_loss < best_val:
                best_val = val_loss
                best_values = model.params.copy_values()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= spec.early_stop_patience:
                    stopped_epoch = epoch
                    break
    if use_early_stop and best_values is not None:
        model.params.load_values(best_values)
    train_seconds = time.perf_counter() - start
    return TrainResult(loss_curve=curve, train_seconds=train_seconds, stopped_epoch=stopped_epoch)


def evaluate_test_mape(model, test_scaled: WindowedDataset, scaler: MinMaxScaler,
                       truth_kwh: np.ndarray) -> float:
    """Forecast the scaled test inputs, invert the scaling, score in kWh."""
    preds_kwh = scaler.inverse(model.predict_batch(test_scaled.inputs))
    return mape(truth_kwh, preds_kwh).percent


@dataclass(frozen=True)
class RunTask:
    """A self-contained grid run (picklable for the worker pool)."""

    house_id: str
    values: tuple[float, ...]
    model_kind: str
    n: int
    seed: int
    train: TrainSpec
    transformer: TransformerSpec
    recurrent: RecurrentSpec
    split_ratio: float = 0.8


def execute_run(task: RunTask) -> ExperimentResult:
    """Window, split, scale, train and score one run."""
    result, _, _ = execute_run_detailed(task)
    return result


def execute_run_detailed(task: RunTask):
    """Like execute_run but also returns the trained model and scaler."""
    inputs, targets = windows_from_values(np.array(task.values), task.n)
    ds = WindowedDataset(n=task.n, inputs=inputs, targets=targets)
    train_raw, test_raw = split_train_test(ds, task.split_ratio)
    train_scaled, test_scaled, scaler = fit_apply_scaler(train_raw, test_raw)

    spec = replace(task.train, seed=task.seed)
    model = build_forecaster(
        task.model_kind,
        make_rng(task.seed, "init"),
        transformer_spec=task.transformer,
        recurrent_spec=task.recurrent,
    )
    val_ds = None
    if spec.early_stop_patience is not None:
        # Chronological tail of the training windows serves as validation.
        train_scaled, val_ds = split_train_test(train_scaled, 0.9)
    result = train_model(model, train_scaled, spec, val_ds=val_ds)
    test_mape = evaluate_test_mape(model, test_scaled, scaler, test_raw.targets)
    experiment = ExperimentResult(
        model_kind=task.model_kind,
        n=task.n,
        house_id=task.house_id,
        seed=task.seed,
        test_mape_percent=test_mape,
        train_seconds=result.train_seconds,
    )
    return experiment, model, scaler


def _execute_run_safe(task: RunTask):
    try:
        return ("ok", execute_run(task))
    except Exception as exc:  # grid keeps going; the failure is reported
        return ("err", RunFailure(task.model_kind, task.n, task.house_id, task.seed,
                                  f"{type(exc).__name__}: {exc}"))


def _result_sort_key(r) -> tuple:
    return (r.house_id, MODEL_KINDS.index(r.model_kind), r.n, r.seed)


def build_grid_tasks(
    houses: Mapping[str, Sequence[float]],
    models: Sequence[str],
    ns: Sequence[int],
    *,
    replicates: int,
    base_seed: int,
    train: TrainSpec,
    transformer: TransformerSpec,
    recurrent: RecurrentSpec,
    split_ratio: float = 0.8,
) -> list[RunTask]:
    """Cartesian product of houses x models x ns x replicates.

    Each task's seed is ``derive_seed(base_seed, house, model, n, replicate)``
    so the schedule can be reordered or parallelized freely.
    """
    if not houses or not models or not ns or replicates < 1:
        raise EmptyInputError("grid needs at least one house, model, n and replicate")
    for kind in models:
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
    tasks = []
    for house_id, values in houses.items():
        values = tuple(float(v) for v in values)
        for kind in models:
            for n in ns:
                for rep in range(replicates):
                    tasks.append(RunTask(
                        house_id=house_id,
                        values=values,
                        model_kind=kind,
                        n=int(n),
                        seed=derive_seed(base_seed, house_id, kind, int(n), rep),
                        train=train,
                        transformer=transformer,
                        recurrent=recurrent,
                        split_ratio=split_ratio,
                    ))
    return tasks


def run_grid(
    houses: Mapping[str, Sequence[float]],
    models: Sequence[str],
    ns: Sequence[int],
    *,
    replicates: int = 5,
    base_seed: int = 0,
    train: TrainSpec = TrainSpec(),
    transformer: TransformerSpec = TransformerSpec(),
    recurrent: RecurrentSpec = RecurrentSpec(),
    split_ratio: float = 0.8,
    workers: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> GridOutcome:
    """Execute the full experiment grid; failures are recorded, not fatal.

    Results come back sorted by (house, model, n, seed) regardless of
    worker count or completion order.
    """
    tasks = build_grid_tasks(
        houses, models, ns,
        replicates=replicates, base_seed=base_seed,
        train=train, transformer=transformer, recurrent=recurrent,
        split_ratio=split_ratio,
    )
    outcomes = []
    if workers <= 1:
        for i, task in enumerate(tasks):
            outcomes.append(_execute_run_safe(task))
            if progress is not None:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, outcome in enumerate(pool.map(_execute_run_safe, tasks)):
                outcomes.append(outcome)
                if progress is not None:
                    progress(i + 1, len(tasks))

    results = sorted((r for tag, r in outcomes if tag == "ok"), key=_result_sort_key)
    failures = sorted((r for tag, r in outcomes if tag == "err"), key=_result_sort_key)
    return GridOutcome(results=results, failures=failures)


def run_single(
    house_id: str,
    values: Sequence[float],
    model_kind: str,
    n: int,
    seed: int,
    *,
    train: TrainSpec = TrainSpec(),
    transformer: TransformerSpec = TransformerSpec(),
    recurrent: RecurrentSpec = RecurrentSpec(),
    split_ratio: float = 0.8,
) -> ExperimentResult:
    task = RunTask(
        house_id=house_id,
        values=tuple(float(v) for v in values),
        model_kind=model_kind,
        n=n,
        seed=seed,
        train=train,
        transformer=transformer,
        recurrent=recurrent,
        split_ratio=split_ratio,
    )
    return execute_run(task)


def write_results_csv(results: Sequence[ExperimentResult], path, *, zero_timing: bool = False) -> None:
    """Write ``model,n,house,seed,mape_percent,train_seconds`` rows.

    ``zero_timing`` replaces wall-clock seconds with 0.0 so repeated runs
    produce byte-identical files (timing is inherently non-reproducible).
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_CSV_HEADER)
        for r in results:
            seconds = 0.0 if zero_timing else r.train_seconds
            writer.writerow([
                r.model_kind, r.n, r.house_id, r.seed,
                repr(r.test_mape_percent), repr(seconds),
            ])


def read_results_csv(path) -> list[ExperimentResult]:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_CSV_HEADER:
            raise SchemaError(f"{path}: expected header {RESULTS_CSV_HEADER}, got {header}")
        results = []
        for row in reader:
            results.append(ExperimentResult(
                model_kind=row[0],
                n=int(row[1]),
                house_id=row[2],
                seed=int(row[3]),
                test_mape_percent=float(row[4]),
                train_seconds=float(row[5]),
            ))
    if not results:
        raise EmptyInputError(f"{path}: results file has no rows")
    return results


def save_run_checkpoint(path, model, scaler: MinMaxScaler, *, house_id: str, n: int,
                        seed: int) -> None:
    """Persist trained parameters plus everything needed to forecast again:
    model kind and size, window length, and the fitted scaler bounds.
    """
    meta = {
        "kind": model.kind,
        "house": house_id,
        "n": str(int(n)),
        "seed": str(int(seed)),
        "scaler_lo": repr(float(scaler.lo)),
        "scaler_hi": repr(float(scaler.hi)),
    }
    if model.kind == "transformer":
        spec = model.spec
        meta.update(
            n_layers=str(spec.n_layers), d_model=str(spec.d_model),
            n_heads=str(spec.n_heads), d_ff=str(spec.d_ff),
            dropout_rate=repr(spec.dropout_rate),
        )
    else:
        meta["hidden_size"] = str(model.spec.hidden_size)
    save_checkpoint(path, model.params, meta)


def load_run_checkpoint(path):
    """Rebuild (model, scaler, meta) from a run checkpoint, bit-exact."""
    arrays, meta = load_checkpoint(path)
    required = ("kind", "house", "n", "scaler_lo", "scaler_hi")
    missing = [k for k in required if k not in meta]
    if missing:
        raise CheckpointError(f"{path}: checkpoint meta missing {', '.join(missing)}")
    kind = meta["kind"]
    if kind == "transformer":
        t_spec = TransformerSpec(
            n_layers=int(meta["n_layers"]), d_model=int(meta["d_model"]),
            n_heads=int(meta["n_heads"]), d_ff=int(meta["d_ff"]),
            dropout_rate=float(meta["dropout_rate"]),
        )
        model = build_forecaster(kind, make_rng(0), transformer_spec=t_spec)
    else:
        r_spec = RecurrentSpec(hidden_size=int(meta["hidden_size"]))
        model = build_forecaster(kind, make_rng(0), recurrent_spec=r_spec)
    model.params.load_values(arrays)
    scaler = MinMaxScaler(lo=float(meta["scaler_lo"]), hi=float(meta["scaler_hi"]))
    return model, scaler, meta
