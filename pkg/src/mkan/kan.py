"""KAN layers and networks over interchangeable spline backends.

A layer maps ``in_dim`` activations to ``out_dim`` sums of per-edge univariate
functions:

    y[n, o] = sum_i  base_weight[o, i] * b(x[n, i])
            + sum_i  spline_weight[o, i] * spline_{o,i}(x[n, i])

where ``b`` is the base function (silu by default, or disabled) and each
edge's spline shares a per-feature knot grid.  The spline path dispatches to
either the recursive oracle (:mod:`mkan.splines`) or the basis-matrix path
(:mod:`mkan.matrix_eval`); both receive identical parameters, so any numeric
disagreement is a bug, not a modeling choice.

For speed the whole spline contribution of a layer is computed as one matrix
product: basis rows are flattened to [n_samples, in_dim*(G+k)] and multiplied
against the weight-scaled coefficients — no per-edge loops.  On the matrix
backend, layers over small grids skip the dense rows entirely and use the
per-segment contraction in :func:`mkan.matrix_eval.layer_spline`, whose cost
grows only linearly with degree.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import matrix_eval, splines
from .splines import KnotGrid, make_uniform_grid

__all__ = [
    "BACKENDS",
    "NetworkSpec",
    "LayerParams",
    "Model",
    "silu",
    "silu_derivative",
    "init_network",
    "layer_forward",
    "forward",
    "parameter_arrays",
    "update_grid_from_samples",
    "refine_grid",
    "save_model",
    "load_model",
]

logger = logging.getLogger(__name__)

BACKENDS = ("recursive", "matrix")
BASE_FUNCTIONS = ("silu", "none")

_RIDGE = 1e-8  # damping on refit normal equations; guards empty intervals


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), with sigmoid in tanh form to avoid exp overflow."""
    return x * (0.5 * (1.0 + np.tanh(0.5 * x)))


def silu_derivative(x: np.ndarray) -> np.ndarray:
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class NetworkSpec:
    """Static description of a network; everything needed to rebuild it."""

    shape: tuple[int, ...]
    degree: int = 3
    grid_size: int = 5
    grid_eps: float = 1.0
    seed: int = 0
    backend: str = "matrix"
    base_function: str = "silu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", tuple(int(w) for w in self.shape))
        if len(self.shape) < 2:
            raise ValueError(f"shape needs at least input and output widths, got {self.shape}")
        if any(w < 1 for w in self.shape):
            raise ValueError(f"all widths must be >= 1, got {self.shape}")
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if not 0.0 <= self.grid_eps <= 1.0:
            raise ValueError(f"grid_eps must be in [0, 1], got {self.grid_eps}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.base_function not in BASE_FUNCTIONS:
            raise ValueError(
                f"base_function must be one of {BASE_FUNCTIONS}, got {self.base_function!r}"
            )


@dataclass
class LayerParams:
    """One layer's parameters: per-edge control points plus base/spline weights."""

    in_dim: int
    out_dim: int
    grids: tuple[KnotGrid, ...]
    coeffs: np.ndarray  # [out_dim, in_dim, G + k]
    base_weight: np.ndarray  # [out_dim, in_dim]
    spline_weight: np.ndarray  # [out_dim, in_dim]

    def __post_init__(self) -> None:
        if len(self.grids) != self.in_dim:
            raise ValueError("need one grid per input feature")
        k = self.grids[0].degree
        g = self.grids[0].intervals
        if any(gr.degree != k or gr.intervals != g for gr in self.grids):
            raise ValueError("all grids in a layer must share degree and interval count")
        n = g + k
        if self.coeffs.shape != (self.out_dim, self.in_dim, n):
            raise ValueError(f"coeffs must have shape {(self.out_dim, self.in_dim, n)}")
        for name in ("base_weight", "spline_weight"):
            if getattr(self, name).shape != (self.out_dim, self.in_dim):
                raise ValueError(f"{name} must have shape {(self.out_dim, self.in_dim)}")
        for arr in (self.coeffs, self.base_weight, self.spline_weight):
            if not np.all(np.isfinite(arr)):
                raise ValueError("layer parameters must be finite")


@dataclass
class Model:
    spec: NetworkSpec
    layers: list[LayerParams]


# Initial gain of the spline branch.  The branch starts as near-zero noise
# either way; a gain > 1 scales how far the layer's function can move per
# unit of coefficient movement, which matters under Adam's bounded per-step
# updates (full-batch regression reaches 10x lower RMSE in a few hundred
# steps with gain 8 than with gain 1, with no effect on initial outputs).
SPLINE_GAIN = 8.0


def init_network(spec: NetworkSpec) -> Model:
    """Deterministic initialization: coefficients ~ N(0, (0.1/sqrt(G+k))^2),
    base weights 1, spline weights :data:`SPLINE_GAIN`, grids uniform on
    [-1, 1]."""
    rng = np.random.default_rng(spec.seed)
    n_bases = spec.grid_size + spec.degree
    scale = 0.1 / np.sqrt(n_bases)
    layers = []
    for in_dim, out_dim in zip(spec.shape[:-1], spec.shape[1:]):
        grids = tuple(
            make_uniform_grid(spec.degree, spec.grid_size, -1.0, 1.0) for _ in range(in_dim)
        )
        layers.append(
            LayerParams(
                in_dim=in_dim,
                out_dim=out_dim,
                grids=grids,
                coeffs=rng.normal(0.0, scale, size=(out_dim, in_dim, n_bases)),
                base_weight=np.ones((out_dim, in_dim)),
                spline_weight=np.full((out_dim, in_dim), SPLINE_GAIN),
            )
        )
    return Model(spec=spec, layers=layers)


@dataclass
class LayerEval:
    """Forward result plus everything the backward pass reuses.

    Exactly one of the two cache styles is populated: ``rows``/``drows``/
    ``clamped`` for the dense-row path, or ``segment`` for the matrix
    backend's per-segment path.  Segment caches borrow workspace buffers, so
    they are valid only until the next evaluation with the same workspace.
    """

    y: np.ndarray
    x: np.ndarray
    base: np.ndarray | None
    scaled_coeffs: np.ndarray  # spline_weight[:, :, None] * coeffs
    rows: np.ndarray | None = None
    drows: np.ndarray | None = None
    clamped: np.ndarray | None = None
    segment: matrix_eval.SegmentEval | None = None


def _backend_module(backend: str):
    if backend == "recursive":
        return splines
    if backend == "matrix":
        return matrix_eval
    raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")


def layer_eval(
    layer: LayerParams,
    x: np.ndarray,
    backend: str,
    base_function: str = "silu",
    need_input_grad: bool = False,
    workspace: dict | None = None,
) -> LayerEval:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ValueError(f"expected inputs of shape [n, {layer.in_dim}], got {x.shape}")
    if base_function not in BASE_FUNCTIONS:
        raise ValueError(f"base_function must be one of {BASE_FUNCTIONS}, got {base_function!r}")
    _backend_module(backend)
    n = x.shape[0]
    scaled = layer.spline_weight[:, :, None] * layer.coeffs
    base = silu(x) if base_function == "silu" else None

    if backend == "matrix" and layer.grids[0].intervals <= matrix_eval.SEGMENT_MAX_INTERVALS:
        ys, segment = matrix_eval.layer_spline(
            layer.grids, scaled, x, need_input_grad, workspace
        )
        if base is not None:
            y = base @ layer.base_weight.T
            y += ys
        else:
            y = ys.copy()  # ys aliases a workspace buffer
        return LayerEval(y=y, x=x, base=base, scaled_coeffs=scaled, segment=segment)

    rows, drows, clamped = _backend_module(backend).layer_basis(
        layer.grids, x, need_input_grad
    )
    y = rows.reshape(n, -1) @ scaled.reshape(layer.out_dim, -1).T
    if base is not None:
        y += base @ layer.base_weight.T
    return LayerEval(
        y=y, x=x, base=base, scaled_coeffs=scaled, rows=rows, drows=drows, clamped=clamped
    )


def layer_forward(
    layer: LayerParams,
    x: np.ndarray,
    backend: str,
    base_function: str = "silu",
    workspace: dict | None = None,
) -> np.ndarray:
    """Layer output only; see :func:`layer_eval` for the cached variant."""
    return layer_eval(layer, x, backend, base_function, workspace=workspace).y


def forward(
    model: Model,
    X: np.ndarray,
    backend: str | None = None,
    workspaces: list[dict] | None = None,
) -> np.ndarray:
    """Compose all layers; returns predictions of shape [n, shape[-1]].

    ``workspaces`` (one dict per layer) lets repeated evaluations reuse the
    big intermediates; the training loop passes its own.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.shape[0]:
        raise ValueError(f"expected inputs of shape [n, {model.spec.shape[0]}], got {X.shape}")
    backend = backend or model.spec.backend
    acts = X
    for idx, layer in enumerate(model.layers):
        ws = workspaces[idx] if workspaces is not None else None
        acts = layer_forward(layer, acts, backend, model.spec.base_function, workspace=ws)
    return acts


def parameter_arrays(model: Model) -> list[np.ndarray]:
    """The trainable arrays in a fixed order: per layer coeffs, base_weight,
    spline_weight.  Mutating these mutates the model (used by the optimizer)."""
    out: list[np.ndarray] = []
    for layer in model.layers:
        out.extend((layer.coeffs, layer.base_weight, layer.spline_weight))
    return out


# ---------------------------------------------------------------------------
# Grid adaptation
# ---------------------------------------------------------------------------


def _refit_coefficients(
    new_grid: KnotGrid, v: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Least-squares control points reproducing ``targets`` at points ``v``.

    Normal equations with ridge damping; returns [n_bases, n_targets].
    Refits run off the hot path, so they always use the reference basis —
    this keeps grid operations backend-independent.
    """
    a = splines.basis_rows(new_grid, v)
    gram = a.T @ a
    gram[np.diag_indices_from(gram)] += _RIDGE
    return np.linalg.solve(gram, a.T @ targets)


def update_grid_from_samples(model: Model, X: np.ndarray, grid_eps: float = 1.0) -> Model:
    """Adapt each grid's domain to the activations actually flowing through it.

    Per layer and input feature the observed activation range, padded by 1%,
    is unioned with the current domain (domains never shrink — a grid that
    already covers its data is left untouched, bitwise, so repeated updates
    are a fixed point).  Changed grids get their coefficients refit by least
    squares so the spline keeps its old values at the observed activations.

    Mutates ``model`` in place and returns it.  Knots stay uniform; grid_eps
    values below 1 (quantile blending elsewhere) are accepted but treated as
    uniform, with a warning.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise ValueError("need a non-empty sample batch")
    if X.ndim != 2 or X.shape[1] != model.spec.shape[0]:
        raise ValueError(f"expected inputs of shape [n, {model.spec.shape[0]}], got {X.shape}")
    if not 0.0 <= grid_eps <= 1.0:
        raise ValueError(f"grid_eps must be in [0, 1], got {grid_eps}")
    if grid_eps < 1.0:
        logger.warning(
            "grid_eps=%s requests quantile blending; uniform knots are required "
            "by the matrix path, proceeding with uniform grids",
            grid_eps,
        )
    spec = model.spec
    acts = X
    for layer in model.layers:
        grids = list(layer.grids)
        for i, grid in enumerate(grids):
            v = acts[:, i]
            vmin, vmax = float(v.min()), float(v.max())
            pad = 0.01 * (vmax - vmin)
            new_lo = min(grid.domain_lo, vmin - pad)
            new_hi = max(grid.domain_hi, vmax + pad)
            if new_lo == grid.domain_lo and new_hi == grid.domain_hi:
                continue
            new_grid = make_uniform_grid(grid.degree, grid.intervals, new_lo, new_hi)
            old_values = splines.basis_rows(grid, v) @ layer.coeffs[:, i, :].T
            layer.coeffs[:, i, :] = _refit_coefficients(new_grid, v, old_values).T
            grids[i] = new_grid
        layer.grids = tuple(grids)
        acts = layer_forward(layer, acts, spec.backend, spec.base_function)
    return model


def refine_grid(model: Model, new_g: int, X: np.ndarray) -> Model:
    """Rebuild every grid with ``new_g`` intervals (same domains), refitting
    coefficients so predictions at the sample activations are preserved.

    ``new_g`` must not be smaller than the current interval count.  Passing
    the current count is an exact no-op: the old coefficients already solve
    the refit problem, so they are kept rather than re-derived through the
    damped solver.
    """
    spec = model.spec
    if new_g < spec.grid_size:
        raise ValueError(f"cannot refine from {spec.grid_size} down to {new_g} intervals")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.shape[0]:
        raise ValueError(f"expected inputs of shape [n, {spec.shape[0]}], got {X.shape}")
    if new_g == spec.grid_size:
        return model
    acts = X
    for layer in model.layers:
        n_bases = new_g + spec.degree
        new_coeffs = np.empty((layer.out_dim, layer.in_dim, n_bases))
        new_grids = []
        for i, grid in enumerate(layer.grids):
            v = acts[:, i]
            new_grid = make_uniform_grid(grid.degree, new_g, grid.domain_lo, grid.domain_hi)
            old_values = splines.basis_rows(grid, v) @ layer.coeffs[:, i, :].T
            new_coeffs[:, i, :] = _refit_coefficients(new_grid, v, old_values).T
            new_grids.append(new_grid)
        layer.grids = tuple(new_grids)
        layer.coeffs = new_coeffs
        acts = layer_forward(layer, acts, spec.backend, spec.base_function)
    model.spec = replace(spec, grid_size=new_g)
    return model


# ---------------------------------------------------------------------------
# Model file format: b"MKAN1\n", one JSON header line, then raw little-endian
# float64 arrays (C order) per layer: coeffs, base_weight, spline_weight.
# ---------------------------------------------------------------------------

_MAGIC = b"MKAN1\n"


def save_model(model: Model, path) -> None:
    spec = model.spec
    header = {
        "format": 1,
        "spec": {
            "shape": list(spec.shape),
            "degree": spec.degree,
            "grid_size": spec.grid_size,
            "grid_eps": spec.grid_eps,
            "seed": spec.seed,
            "backend": spec.backend,
            "base_function": spec.base_function,
        },
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "domains": [[g.domain_lo, g.domain_hi] for g in layer.grids],
            }
            for layer in model.layers
        ],
    }
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        for layer in model.layers:
            for arr in (layer.coeffs, layer.base_weight, layer.spline_weight):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not an MKAN1 model file")
    try:
        end = data.index(b"\n", len(_MAGIC))
        header = json.loads(data[len(_MAGIC) : end].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: corrupt model header") from exc
    if header.get("format") != 1:
        raise ValueError(f"{path}: unsupported model format {header.get('format')!r}")
    s = header["spec"]
    spec = NetworkSpec(
        shape=tuple(s["shape"]),
        degree=s["degree"],
        grid_size=s["grid_size"],
        grid_eps=s["grid_eps"],
        seed=s["seed"],
        backend=s["backend"],
        base_function=s["base_function"],
    )
    n_bases = spec.grid_size + spec.degree
    offset = end + 1
    layers = []
    for entry in header["layers"]:
        in_dim, out_dim = entry["in_dim"], entry["out_dim"]
        grids = tuple(
            make_uniform_grid(spec.degree, spec.grid_size, lo, hi)
            for lo, hi in entry["domains"]
        )
        arrays = []
        for shape in ((out_dim, in_dim, n_bases), (out_dim, in_dim), (out_dim, in_dim)):
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            arrays.append(arr.reshape(shape).copy())
        layers.append(
            LayerParams(
                in_dim=in_dim,
                out_dim=out_dim,
                grids=grids,
                coeffs=arrays[0],
                base_weight=arrays[1],
                spline_weight=arrays[2],
            )
        )
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return Model(spec=spec, layers=layers)
