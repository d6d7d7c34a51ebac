"""Loss, hand-written backpropagation, Adam, and the full-batch training loop.

Gradients are derived directly from the layer equation rather than through an
autodiff framework.  With ``g = dL/dy`` for a layer's output and ``rows`` /
``drows`` the (derivative) basis rows from the active backend, the per-layer
gradients collapse into two matrix products and elementwise reductions:

    gi      = g^T @ rows                (shared kernel, [out, in, G+k])
    dcoeffs = spline_weight[:, :, None] * gi
    dws     = sum_m coeffs * gi         (spline values contracted with g)
    dwb     = g^T @ base(x)
    dx      = (g @ base_weight) * base'(x)
            + sum_m (g @ scaled_coeffs) * drows     (zeroed where clamped)

On the matrix backend's per-segment layer path the same ``gi`` and the spline
part of ``dx`` come from :func:`mkan.matrix_eval.layer_spline_backward`
instead of dense rows; the downstream formulas are shared.  Both backends
compute the same mathematical gradients, so they may differ only by
floating-point noise; the test suite holds that to 1e-8 relative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from . import kan, matrix_eval
from .datasets import Dataset
from .kan import Model

__all__ = [
    "TrainConfig",
    "StepLog",
    "LayerGradients",
    "AdamState",
    "TrainingDiverged",
    "rmse",
    "backward",
    "init_adam_state",
    "adam_step",
    "train",
    "write_step_log",
]


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0  # recorded for provenance; the full-batch loop draws nothing
    backend: str = "matrix"
    grid_update_schedule: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be > 0")
        if self.backend not in kan.BACKENDS:
            raise ValueError(f"backend must be one of {kan.BACKENDS}, got {self.backend!r}")
        if self.grid_update_schedule is not None:
            object.__setattr__(
                self, "grid_update_schedule", tuple(int(s) for s in self.grid_update_schedule)
            )


@dataclass(frozen=True)
class StepLog:
    step: int
    train_rmse: float
    test_rmse: float
    seconds: float


@dataclass
class LayerGradients:
    coeffs: np.ndarray
    base_weight: np.ndarray
    spline_weight: np.ndarray


class TrainingDiverged(RuntimeError):
    """Raised when the train RMSE stops being finite."""


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("rmse of an empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _as_targets(model: Model, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    n_out = model.spec.shape[-1]
    if Y.ndim == 1:
        if n_out != 1:
            raise ValueError(f"1-D targets given but the model has {n_out} outputs")
        return Y[:, None]
    if Y.ndim != 2 or Y.shape[1] != n_out:
        raise ValueError(f"expected targets of shape [n, {n_out}], got {Y.shape}")
    return Y


def _loss_grads(
    model: Model,
    X: np.ndarray,
    Y: np.ndarray,
    backend: str,
    workspaces: list[dict] | None = None,
):
    """Forward with caches, then the reverse sweep.  Returns (pred, grads).

    The loss is the mean squared error over every output entry; RMSE is its
    square root and is what gets reported.
    """
    spec = model.spec
    evals = []
    acts = np.asarray(X, dtype=np.float64)
    for idx, layer in enumerate(model.layers):
        ev = kan.layer_eval(
            layer,
            acts,
            backend,
            spec.base_function,
            need_input_grad=idx > 0,
            workspace=workspaces[idx] if workspaces is not None else None,
        )
        if not np.all(np.isfinite(ev.y)):
            raise FloatingPointError(f"non-finite activations leaving layer {idx}")
        evals.append(ev)
        acts = ev.y
    pred = acts

    g = (2.0 / pred.size) * (pred - Y)
    grads: list[LayerGradients | None] = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        ev = evals[idx]
        n = ev.x.shape[0]
        if ev.segment is not None:
            gi, dx_spline = matrix_eval.layer_spline_backward(ev.segment, g, idx > 0)
        else:
            gi = (g.T @ ev.rows.reshape(n, -1)).reshape(layer.out_dim, layer.in_dim, -1)
            dx_spline = None
        dcoeffs = layer.spline_weight[:, :, None] * gi
        dws = np.sum(layer.coeffs * gi, axis=-1)
        if ev.base is not None:
            dwb = g.T @ ev.base
        else:
            dwb = np.zeros_like(layer.base_weight)
        grads[idx] = LayerGradients(dcoeffs, dwb, dws)
        if idx > 0:
            if dx_spline is None:
                t = (g @ ev.scaled_coeffs.reshape(layer.out_dim, -1)).reshape(
                    n, layer.in_dim, -1
                )
                dx = np.sum(t * ev.drows, axis=-1)
                dx[ev.clamped] = 0.0  # clamped inputs sit on the flat extension
            else:
                dx = dx_spline  # clamped entries already zeroed
            if ev.base is not None:
                dx = dx + (g @ layer.base_weight) * kan.silu_derivative(ev.x)
            g = dx
    return pred, grads


def backward(model: Model, X, Y, backend: str | None = None) -> list[LayerGradients]:
    """Gradients of the MSE loss for every parameter, one entry per layer."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.shape[0]:
        raise ValueError(f"expected inputs of shape [n, {model.spec.shape[0]}], got {X.shape}")
    targets = _as_targets(model, Y)
    if targets.shape[0] != X.shape[0]:
        raise ValueError("inputs and targets disagree on sample count")
    _, grads = _loss_grads(model, X, targets, backend or model.spec.backend)
    return grads


def _flat_grads(grads: list[LayerGradients]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for g in grads:
        out.extend((g.coeffs, g.base_weight, g.spline_weight))
    return out


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]


def init_adam_state(params: list[np.ndarray]) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    config: TrainConfig,
):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and state must have matching lengths")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    lr = config.learning_rate
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += config.adam_eps
        p -= (lr / c1) * (m / denom)
    return params, state


def train(model: Model, dataset: Dataset, config: TrainConfig):
    """Full-batch training: forward, MSE backward, Adam, per-step logging.

    Grid updates listed in ``config.grid_update_schedule`` fire at the start
    of those step indices (0-based) and are included in that step's time.
    ``StepLog.seconds`` covers the optimization work of the step — grid
    update, forward/backward, Adam — while the test-set evaluation is
    diagnostic output and runs outside the timed region.  Returns
    ``(model, [StepLog, ...])``; raises :class:`TrainingDiverged` (with the
    steps so far attached as ``.logs``) if the train RMSE, an activation, or
    a parameter becomes non-finite.
    """
    x_train = dataset.X[dataset.train_idx]
    y_train = _as_targets(model, dataset.Y[dataset.train_idx])
    x_test = dataset.X[dataset.test_idx]
    y_test = _as_targets(model, dataset.Y[dataset.test_idx])
    if x_train.shape[1] != model.spec.shape[0]:
        raise ValueError(
            f"dataset has {x_train.shape[1]} inputs but the model expects {model.spec.shape[0]}"
        )
    # update_grid_from_samples rewrites parameters in place, so these array
    # bindings (and the optimizer state keyed to them) stay valid across updates
    params = kan.parameter_arrays(model)
    state = init_adam_state(params)
    schedule = frozenset(config.grid_update_schedule or ())
    workspaces: list[dict] = [{} for _ in model.layers]
    logs: list[StepLog] = []
    for step in range(config.steps):
        # all shape contracts were checked before the loop, so numeric errors
        # inside it can only mean the optimization blew up
        try:
            t0 = perf_counter()
            if step in schedule:
                kan.update_grid_from_samples(model, x_train, model.spec.grid_eps)
            pred, grads = _loss_grads(model, x_train, y_train, config.backend, workspaces)
            train_rmse = float(np.sqrt(np.mean((pred - y_train) ** 2)))
            adam_step(params, _flat_grads(grads), state, config)
            seconds = perf_counter() - t0
            test_rmse = rmse(
                kan.forward(model, x_test, config.backend, workspaces=workspaces), y_test
            )
        except (FloatingPointError, ValueError) as exc:
            err = TrainingDiverged(f"non-finite values at step {step}: {exc}")
            err.logs = logs
            raise err from exc
        logs.append(StepLog(step, train_rmse, test_rmse, seconds))
        if not math.isfinite(train_rmse):
            err = TrainingDiverged(f"train RMSE became non-finite at step {step}")
            err.logs = logs
            raise err
    return model, logs


def write_step_log(logs: list[StepLog], path) -> None:
    """Step log as CSV: step,train_rmse,test_rmse,seconds."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "train_rmse", "test_rmse", "seconds"])
        for log in logs:
            writer.writerow([log.step, log.train_rmse, log.test_rmse, log.seconds])
