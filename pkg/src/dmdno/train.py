"""Mini-batch training of the operator network, metrics and CSV export.

Every (sample, grid point) pair is one row. Branch inputs are per-sample, the
trunk sees the point's coordinates normalized to [0, 1]^2.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from . import linalg
from .dmd import DmdConfig, dmd_decompose, encode_arrays
from .errors import InvalidInputError, TrainingAborted
from .model import (ModelParams, OperatorInputs, OperatorSpec, backward, branch_inputs, build_spec,
                    forward, init_params)

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    reg_lambda: float = 1e-5
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 0.8
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.reg_lambda < 0:
            raise InvalidInputError("reg_lambda must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidInputError("train_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidInputError("epochs >= 0, batch_size >= 1 and eval_every >= 1 are required")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"optimizer must be one of {OPTIMIZERS}")


# -- data ----------------------------------------------------------------------

@dataclass
class OperatorData:
    """Per-sample network inputs and targets for a whole dataset (or split)."""
    conditions: np.ndarray  # (N, c)
    modes: np.ndarray  # (N, 2nr)
    dynamics: np.ndarray  # (N, 4r)
    coords: np.ndarray  # (P, 2) in [0, 1]
    targets: np.ndarray  # (N, C, P)

    def __len__(self):
        return self.conditions.shape[0]

    @property
    def n_points(self):
        return self.coords.shape[0]

    @property
    def channels(self):
        return self.targets.shape[1]

    def subset(self, index) -> "OperatorData":
        index = np.asarray(index)
        return OperatorData(self.conditions[index], self.modes[index], self.dynamics[index],
                            self.coords, self.targets[index])

    def rows(self, sample_index, point_index, prepared=None) -> tuple:
        """(OperatorInputs, targets (R, C)) for the given rows, deduplicating samples/points.

        ``prepared`` is the output of ``branch_inputs`` for the whole dataset.
        """
        samples, s_inv = np.unique(sample_index, return_inverse=True)
        points, p_inv = np.unique(point_index, return_inverse=True)
        inputs = OperatorInputs(self.conditions[samples], self.coords[points], s_inv, p_inv,
                                self.modes[samples], self.dynamics[samples])
        if prepared is not None:
            inputs.prepared = {k: v[samples] for k, v in prepared.items()}
        return inputs, self.targets[sample_index, :, point_index]

    def all_rows(self) -> tuple:
        n, p = len(self), self.n_points
        si = np.repeat(np.arange(n), p)
        pi = np.tile(np.arange(p), n)
        inputs = OperatorInputs(self.conditions, self.coords, si, pi, self.modes, self.dynamics)
        return inputs, self.targets.transpose(0, 2, 1).reshape(n * p, -1)


def grid_coords(nx, ny) -> np.ndarray:
    """Row-major node coordinates normalized to [0, 1]^2, matching field.ravel()."""
    x = np.arange(nx) / (nx - 1)
    y = np.arange(ny) / (ny - 1)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def operator_data(dataset, dynamics_variant="eig_amp") -> OperatorData:
    steps = dataset.trajectories.shape[1] - 1
    encs = [encode_arrays(dataset.dmd_modes[i], dataset.dmd_eigs[i], dataset.dmd_amps[i],
                          dynamics_variant, steps) for i in range(len(dataset))]
    return OperatorData(
        conditions=np.asarray(dataset.conditions, dtype=np.float64),
        modes=np.stack([e.mode_vec for e in encs]),
        dynamics=np.stack([e.dyn_vec for e in encs]),
        coords=grid_coords(dataset.grid.nx, dataset.grid.ny),
        targets=dataset.target_matrix(),
    )


def split_indices(n, train_fraction, seed):
    """Seeded sample-level train/test split; both parts sorted."""
    if n < 2:
        raise InvalidInputError("need at least two samples to split")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_train = min(max(1, int(round(train_fraction * n))), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def input_stats(spec: OperatorSpec, data: OperatorData) -> dict:
    """Per-feature standardization of every branch input, from ``data``."""
    def stats(x):
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 1e-12 * max(1.0, float(np.abs(x).max(initial=0.0))), scale, 1.0)
        return {"shift": shift.tolist(), "scale": scale.tolist()}

    out = {}
    for j, (a, b) in enumerate(spec.condition_slices):
        out[f"branch{j}"] = stats(data.conditions[:, a:b])
    if spec.dmd_branches_enabled:
        out["modes"] = stats(data.modes)
        out["dynamics"] = stats(data.dynamics)
    return out


# -- objective -----------------------------------------------------------------

def _check_batch(inputs, targets):
    if inputs.n_rows == 0:
        raise InvalidInputError("empty batch")
    if targets.shape[0] != inputs.n_rows:
        raise InvalidInputError(f"{targets.shape[0]} targets for {inputs.n_rows} rows")


def loss(params: ModelParams, inputs: OperatorInputs, targets, reg_lambda) -> float:
    """(1/|B|) sum_rows ||u - u_hat||^2 + lambda * ||theta||^2."""
    _check_batch(inputs, targets)
    resid = forward(params, inputs) - targets
    return float(np.sum(resid * resid) / inputs.n_rows + reg_lambda * (params.theta @ params.theta))


def _loss_and_data_grad(params, inputs, targets, reg_lambda, out=None):
    """Full objective plus the gradient of its data term only."""
    _check_batch(inputs, targets)
    pred, trace = forward(params, inputs, keep_trace=True)
    resid = pred - targets
    n = inputs.n_rows
    value = float(np.sum(resid * resid) / n + reg_lambda * (params.theta @ params.theta))
    g = backward(params, inputs, trace, (2.0 / n) * resid, out=out)
    return value, g


def loss_and_grad(params: ModelParams, inputs: OperatorInputs, targets, reg_lambda):
    value, g = _loss_and_data_grad(params, inputs, targets, reg_lambda)
    g += (2.0 * reg_lambda) * params.theta
    return value, g


def grad(params: ModelParams, inputs: OperatorInputs, targets, reg_lambda) -> np.ndarray:
    return loss_and_grad(params, inputs, targets, reg_lambda)[1]


def data_loss(params: ModelParams, data: OperatorData, reg_lambda=0.0, chunk=256) -> float:
    """Loss over every row of ``data``, evaluated sample-chunk by sample-chunk."""
    total = 0.0
    for start in range(0, len(data), chunk):
        part = data.subset(np.arange(start, min(start + chunk, len(data))))
        inputs, targets = part.all_rows()
        resid = forward(params, inputs) - targets
        total += float(np.sum(resid * resid))
    return total / (len(data) * data.n_points) + reg_lambda * float(params.theta @ params.theta)


# -- optimizers ------------------------------------------------------------------

def sgd_step(theta, g, eta):
    return theta - eta * g


@dataclass
class OptimizerState:
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    step: int = 0

    @classmethod
    def for_params(cls, n, optimizer="adam"):
        if optimizer == "adam":
            return cls(np.zeros(n), np.zeros(n), 0)
        return cls()


# moments of parameters behind saturated tanh units decay geometrically into the
# subnormal range, where arithmetic is two orders of magnitude slower
MOMENT_FLUSH = 1e-200


@numba.njit(cache=True, error_model="numpy")
def _fused_adam(theta, g, m, v, reg2, b1, b2, step_size, bc2, eps):
    # adds the L2 term to the data gradient on the fly
    for i in range(theta.size):
        gi = g[i] + reg2 * theta[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        mi = mi if abs(mi) >= MOMENT_FLUSH else 0.0
        vi = vi if vi >= MOMENT_FLUSH else 0.0
        m[i] = mi
        v[i] = vi
        theta[i] -= step_size * (mi / (np.sqrt(vi / bc2) + eps))


def adam_step(state: OptimizerState, theta, g, cfg: TrainConfig):
    """Bias-corrected Adam; updates ``state`` and ``theta`` in place and returns both."""
    if state.m is None or state.m.shape != theta.shape:
        raise InvalidInputError("optimizer state does not match parameter vector")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    step_size = cfg.learning_rate / (1.0 - b1**state.step)
    _fused_adam(theta, np.ascontiguousarray(g, dtype=np.float64), state.m, state.v, 0.0,
                b1, b2, step_size, 1.0 - b2**state.step, cfg.eps)
    return state, theta


# -- training loop -----------------------------------------------------------------

@dataclass
class LossHistory:
    rows: list = field(default_factory=list)  # (epoch, train_loss, test_loss)

    def append(self, epoch, train_loss, test_loss):
        if self.rows and epoch <= self.rows[-1][0]:
            raise InvalidInputError("epochs must be strictly increasing")
        self.rows.append((int(epoch), float(train_loss), float(test_loss)))

    @property
    def epochs(self):
        return [r[0] for r in self.rows]

    def train_losses(self):
        return np.array([r[1] for r in self.rows])

    def test_losses(self):
        return np.array([r[2] for r in self.rows])

    def to_csv(self, path):
        write_csv(path, ["epoch", "train_loss", "test_loss"], self.rows)


def default_spec_for(data: OperatorData, dmd_branches_enabled=True, **kwargs) -> OperatorSpec:
    return build_spec(data.conditions.shape[1], data.modes.shape[1], data.dynamics.shape[1],
                      out_channels=data.channels, dmd_branches_enabled=dmd_branches_enabled, **kwargs)


@dataclass
class TrainResult:
    params: ModelParams
    history: LossHistory
    train_index: np.ndarray
    test_index: np.ndarray


def train(data: OperatorData, spec: Optional[OperatorSpec] = None, cfg: TrainConfig = TrainConfig(),
          progress=None) -> TrainResult:
    """Algorithm loop: shuffled mini-batches, optimizer updates, periodic logging.

    The logged train loss is the mean mini-batch objective over the epoch; the
    test loss is the objective on the held-out samples after the epoch.
    """
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    train_idx, test_idx = split_indices(len(data), cfg.train_fraction, cfg.seed)
    train_data, test_data = data.subset(train_idx), data.subset(test_idx)
    spec = spec or default_spec_for(data)
    if spec.input_stats is None:
        from dataclasses import replace
        spec = replace(spec, input_stats=input_stats(spec, train_data))
    params = init_params(spec, cfg.seed)
    history = LossHistory()
    state = OptimizerState.for_params(params.theta.size, cfg.optimizer)
    rng = np.random.Generator(np.random.PCG64([cfg.seed, 1]))
    n_rows = len(train_data) * train_data.n_points
    all_s = np.repeat(np.arange(len(train_data)), train_data.n_points)
    all_p = np.tile(np.arange(train_data.n_points), len(train_data))
    prepared = branch_inputs(spec, train_data.all_rows()[0])
    g = np.zeros(params.theta.size)
    reg2 = 2.0 * cfg.reg_lambda
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_rows)
        total, n_batches = 0.0, 0
        for b, start in enumerate(range(0, n_rows, cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            inputs, targets = train_data.rows(all_s[rows], all_p[rows], prepared)
            value, _ = _loss_and_data_grad(params, inputs, targets, cfg.reg_lambda, out=g)
            if cfg.optimizer == "adam":
                state.step += 1
                _fused_adam(params.theta, g, state.m, state.v, reg2, cfg.beta1, cfg.beta2,
                                     cfg.learning_rate / (1.0 - cfg.beta1**state.step),
                                     1.0 - cfg.beta2**state.step, cfg.eps)
            else:
                g += reg2 * params.theta
                params.theta -= cfg.learning_rate * g
            # a non-finite gradient poisons theta and surfaces in the next batch's loss
            if not math.isfinite(value):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            total += value
            n_batches += 1
        if epoch % cfg.eval_every == 0:
            train_loss = total / n_batches
            test_loss = data_loss(params, test_data, cfg.reg_lambda)
            if not math.isfinite(test_loss):
                raise TrainingAborted(f"non-finite test loss at epoch {epoch}", epoch=epoch)
            history.append(epoch, train_loss, test_loss)
            log.info("epoch %d train %.6f test %.6f", epoch, train_loss, test_loss)
            if progress is not None:
                progress(epoch, train_loss, test_loss)
    return TrainResult(params, history, train_idx, test_idx)


# -- metrics -------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mse: list  # per channel
    rel_l2: list
    max_err: list
    mse_all: float
    rel_l2_all: float
    max_err_all: float
    zero_norm_target: bool = False

    def rows(self):
        out = []
        for c in range(len(self.mse)):
            out += [("mse", str(c), self.mse[c]), ("rel_l2", str(c), self.rel_l2[c]),
                    ("max_err", str(c), self.max_err[c])]
        out += [("mse", "all", self.mse_all), ("rel_l2", "all", self.rel_l2_all),
                ("max_err", "all", self.max_err_all)]
        return out

    def to_csv(self, path):
        write_csv(path, ["metric", "channel", "value"], self.rows())


def metrics(pred, truth) -> MetricsReport:
    """MSE, relative L2 and max abs error; arrays are (rows, channels)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvalidInputError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.ndim == 1:
        pred, truth = pred[:, None], truth[:, None]
    diff = pred - truth
    zero = False

    def rel(d, t):
        nonlocal zero
        tn = np.linalg.norm(t)
        if tn == 0.0:
            zero = True
            return float(np.linalg.norm(d))
        return float(np.linalg.norm(d) / tn)

    c = diff.shape[1]
    return MetricsReport(
        mse=[float(np.mean(diff[:, k] ** 2)) for k in range(c)],
        rel_l2=[rel(diff[:, k], truth[:, k]) for k in range(c)],
        max_err=[float(np.max(np.abs(diff[:, k]))) for k in range(c)],
        mse_all=float(np.mean(diff**2)),
        rel_l2_all=rel(diff, truth),
        max_err_all=float(np.max(np.abs(diff))),
        zero_norm_target=zero,
    )


def predict(params: ModelParams, data: OperatorData) -> np.ndarray:
    """Predictions shaped like ``data.targets`` (N, C, P)."""
    inputs, _ = data.all_rows()
    out = forward(params, inputs)
    return out.reshape(len(data), data.n_points, -1).transpose(0, 2, 1)


def evaluate(params: ModelParams, data: OperatorData) -> MetricsReport:
    pred = predict(params, data)
    c = data.channels
    return metrics(pred.transpose(0, 2, 1).reshape(-1, c), data.targets.transpose(0, 2, 1).reshape(-1, c))


# -- truncation bound ----------------------------------------------------------------

BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class BoundTrial:
    trial: int
    sample: int
    rank: int
    eps: float  # ||u - u_r||_F
    lhs: float  # ||G(u) - G(u_r)||_2
    lipschitz: float  # sampled estimate of L_H
    bound: float  # 2 L_H eps (1 + slack)
    satisfied: bool


@dataclass
class BoundReport:
    trials: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(not t.satisfied for t in self.trials)

    def summary(self) -> str:
        n = len(self.trials)
        if n == 0:
            return "bound check: 0 trials"
        worst = max(t.lhs / t.bound if t.bound > 0 else (math.inf if t.lhs > 0 else 0.0) for t in self.trials)
        return f"bound check: {n} trials, {self.violations} violations, max lhs/bound {worst:.6g}"

    def to_csv(self, path):
        header = ["trial", "sample", "rank", "eps", "lhs", "lipschitz", "bound", "satisfied"]
        write_csv(path, header, [(t.trial, t.sample, t.rank, t.eps, t.lhs, t.lipschitz, t.bound,
                                  int(t.satisfied)) for t in self.trials])


def truncate(u, r):
    """Optimal rank-r approximation of ``u`` in Frobenius norm.

    When r reaches the numerical rank, ``u`` itself is returned, so the
    truncation error is exactly zero.
    """
    u = np.asarray(u, dtype=np.float64)
    fac = linalg.svd(u)
    tol = max(u.shape) * np.finfo(np.float64).eps * (fac.sigma[0] if fac.sigma.size else 0.0)
    if np.all(fac.sigma[r:] <= tol):
        return u.copy()
    return fac.truncated(r)


class _SnapshotOperator:
    """H: snapshot matrix -> network output on every grid point, conditions held fixed."""

    def __init__(self, params: ModelParams, condition, coords, dmd_cfg: DmdConfig):
        spec = params.spec
        if not spec.dmd_branches_enabled:
            raise InvalidInputError("bound check needs a model with DMD branches")
        self.params = params
        self.condition = np.asarray(condition, dtype=np.float64)
        self.coords = coords
        self.cfg = dmd_cfg
        self.rank = spec.dynamics_branch.in_width // 4

    def encode(self, u):
        dec = dmd_decompose(u, self.cfg)
        if dec.rank > self.rank:
            raise InvalidInputError(f"DMD rank {dec.rank} exceeds the network's {self.rank}")
        pad = self.rank - dec.rank  # missing directions enter as zero modes
        modes = np.pad(dec.modes, ((0, 0), (0, pad)))
        eigs, amps = np.pad(dec.eigenvalues, (0, pad)), np.pad(dec.amplitudes, (0, pad))
        return encode_arrays(modes, eigs, amps, self.params.spec.dynamics_variant, dec.n_steps)

    def __call__(self, snapshots) -> np.ndarray:
        """Outputs (len(snapshots), P * C), one row per snapshot matrix."""
        encs = [self.encode(u) for u in snapshots]
        s, p = len(encs), self.coords.shape[0]
        inputs = OperatorInputs(np.repeat(self.condition[None], s, axis=0), self.coords,
                                np.repeat(np.arange(s), p), np.tile(np.arange(p), s),
                                np.stack([e.mode_vec for e in encs]), np.stack([e.dyn_vec for e in encs]))
        return forward(self.params, inputs).reshape(s, -1)


def check_bound(params: ModelParams, dataset, rank=None, trials=100, pairs=200, seed=0,
                samples=None) -> BoundReport:
    """Audit ||G(u) - G(u_r)|| <= 2 L_H ||u - u_r||_F on rank-r truncations.

    L_H is the largest difference quotient over ``pairs`` random perturbations
    of u plus the audited pair itself, so it is a lower bound on the true
    Lipschitz constant.
    """
    if trials < 0 or pairs < 1:
        raise InvalidInputError("trials must be >= 0 and pairs >= 1")
    samples = np.arange(len(dataset)) if samples is None else np.asarray(samples)
    if trials > 0 and samples.size == 0:
        raise InvalidInputError("no samples to audit")
    dmd_cfg = DmdConfig(**dataset.params["dmd"])
    rank = dataset.rank if rank is None else int(rank)
    if rank < 1:
        raise InvalidInputError(f"rank must be >= 1, got {rank}")
    coords = grid_coords(dataset.grid.nx, dataset.grid.ny)
    report = BoundReport()
    for k in range(trials):
        i = int(samples[k % samples.size])
        h = _SnapshotOperator(params, dataset.conditions[i], coords, dmd_cfg)
        u = dataset.snapshot_matrix(i)
        u_r = truncate(u, rank)
        eps = float(np.linalg.norm(u - u_r))
        rng = np.random.Generator(np.random.PCG64([seed, 2, k]))
        base = eps if eps > 0 else 1e-3 * max(float(np.linalg.norm(u)), 1.0)
        sizes = base * np.logspace(-3, 0, pairs)
        deltas = []
        for size in sizes:
            d = rng.standard_normal(u.shape)
            deltas.append(d * (size / np.linalg.norm(d)))
        out = h([u, u_r] + [u + d for d in deltas])
        lhs = float(np.linalg.norm(out[0] - out[1]))
        quotients = [np.linalg.norm(out[0] - o) / np.linalg.norm(d) for o, d in zip(out[2:], deltas)]
        if eps > 0:
            quotients.append(lhs / eps)
        lip = float(max(quotients))
        bound = 2.0 * lip * eps * (1.0 + BOUND_SLACK)
        report.trials.append(BoundTrial(k, i, rank, eps, lhs, lip, bound, lhs <= bound))
    return report


# -- csv -------------------------------------------------------------------------------

def format_value(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(x) for x in row])
