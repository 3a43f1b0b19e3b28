"""Multi-branch operator network: tanh MLP branches fused by Hadamard product and
summed against a trunk MLP evaluated at the query coordinate.

For each output channel c::

    out_c(x) = sum_i t_i(x) * prod_k g_k(input_k)_i

where ``t`` is the trunk and the ``g_k`` are the function branches plus (when
enabled) the DMD modes and dynamics branches. With the DMD branches disabled
and one function branch this is exactly the DeepONet inner product.

Parameters live in a single flat vector ``theta``; ``ParamLayout`` maps every
(channel, net, layer) to its weight and bias slices. Weights are stored
(fan_out, fan_in) so a layer computes ``h @ W.T + b``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, InvalidInputError
from .fileio import atomic_write_bytes

CHECKPOINT_MAGIC = b"DMDNOMP1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise InvalidInputError("an MLP needs at least an input and an output width")
        if min(widths) < 1:
            raise InvalidInputError(f"layer widths must be >= 1, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def in_width(self):
        return self.layer_widths[0]

    @property
    def out_width(self):
        return self.layer_widths[-1]

    @property
    def n_params(self):
        w = self.layer_widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


@dataclass(frozen=True)
class OperatorSpec:
    trunk: MlpSpec
    function_branches: tuple
    condition_slices: tuple  # ((start, stop), ...) one per function branch
    latent_p: int
    out_channels: int = 1
    dmd_branches_enabled: bool = True
    modes_branch: Optional[MlpSpec] = None
    dynamics_branch: Optional[MlpSpec] = None
    # trunk input = coord_scale * (2 * x01 - 1) for coordinates x01 in [0, 1]
    coord_scale: float = 10.0
    # per-feature affine input transform: {name: {"shift": [...], "scale": [...]}}
    input_stats: Optional[dict] = None
    dynamics_variant: str = "eig_amp"

    def __post_init__(self):
        object.__setattr__(self, "function_branches", tuple(self.function_branches))
        object.__setattr__(self, "condition_slices",
                           tuple((int(a), int(b)) for a, b in self.condition_slices))
        if len(self.function_branches) != len(self.condition_slices):
            raise InvalidInputError("one condition slice is required per function branch")
        if self.out_channels < 1:
            raise InvalidInputError("out_channels must be >= 1")
        for (a, b), br in zip(self.condition_slices, self.function_branches):
            if b - a != br.in_width:
                raise InvalidInputError(f"condition slice {a}:{b} does not match branch input {br.in_width}")
        if self.dmd_branches_enabled and (self.modes_branch is None or self.dynamics_branch is None):
            raise InvalidInputError("DMD branches enabled but modes/dynamics specs missing")
        for name, net in self.nets():
            if net.out_width != self.latent_p:
                raise InvalidInputError(f"{name} output width {net.out_width} != latent_p {self.latent_p}")

    def nets(self):
        """(name, MlpSpec) for every sub-network of one channel, in layout order."""
        out = [("trunk", self.trunk)]
        out += [(f"branch{j}", b) for j, b in enumerate(self.function_branches)]
        if self.dmd_branches_enabled:
            out += [("modes", self.modes_branch), ("dynamics", self.dynamics_branch)]
        return out

    def branch_names(self):
        return [name for name, _ in self.nets() if name != "trunk"]

    def _cached(self, key, build):
        cache = self.__dict__.setdefault("_cache", {})
        if key not in cache:
            cache[key] = build()
        return cache[key]

    @property
    def layout(self) -> "ParamLayout":
        return self._cached("layout", lambda: ParamLayout(self))

    def stat_arrays(self, name):
        """(shift, scale) arrays of the input transform for ``name``, or None."""
        def build():
            stats = (self.input_stats or {}).get(name)
            if stats is None:
                return None
            return np.asarray(stats["shift"], dtype=np.float64), np.asarray(stats["scale"], dtype=np.float64)
        return self._cached(("stats", name), build)

    @property
    def condition_width(self):
        return max((b for _, b in self.condition_slices), default=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("trunk", "modes_branch", "dynamics_branch"):
            if d[key] is not None:
                d[key] = list(d[key]["layer_widths"])
        d["function_branches"] = [list(b["layer_widths"]) for b in d["function_branches"]]
        d["condition_slices"] = [list(s) for s in self.condition_slices]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown OperatorSpec fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("trunk", "modes_branch", "dynamics_branch"):
            if d.get(key) is not None:
                d[key] = MlpSpec(tuple(d[key]))
        d["function_branches"] = tuple(MlpSpec(tuple(w)) for w in d["function_branches"])
        d["condition_slices"] = tuple(tuple(s) for s in d["condition_slices"])
        return cls(**d)


def build_spec(condition_width, mode_width, dyn_width, out_channels=1, hidden=32, latent_p=32,
               depth=2, dmd_branches_enabled=True, coord_dim=2, trunk_hidden=None,
               coord_scale=10.0, dynamics_variant="eig_amp") -> OperatorSpec:
    """Default architecture: every net is [input -> hidden x depth -> latent_p]."""
    def mlp(n_in, h=hidden):
        return MlpSpec((n_in,) + (h,) * depth + (latent_p,))

    return OperatorSpec(
        trunk=mlp(coord_dim, trunk_hidden or hidden),
        function_branches=(mlp(condition_width),),
        condition_slices=((0, condition_width),),
        latent_p=latent_p,
        out_channels=out_channels,
        dmd_branches_enabled=dmd_branches_enabled,
        modes_branch=mlp(mode_width) if dmd_branches_enabled else None,
        dynamics_branch=mlp(dyn_width) if dmd_branches_enabled else None,
        coord_scale=coord_scale,
        dynamics_variant=dynamics_variant,
    )


# -- parameter layout ----------------------------------------------------------

@dataclass(frozen=True)
class LayerSlot:
    channel: int
    net: str
    layer: int
    weight: slice
    bias: slice
    shape: tuple  # (fan_out, fan_in)


class ParamLayout:
    def __init__(self, spec: OperatorSpec):
        self.spec = spec
        self.slots = []
        offset = 0
        for c in range(spec.out_channels):
            for name, net in spec.nets():
                w = net.layer_widths
                for layer, (fan_in, fan_out) in enumerate(zip(w[:-1], w[1:])):
                    ws = slice(offset, offset + fan_in * fan_out)
                    offset += fan_in * fan_out
                    bs = slice(offset, offset + fan_out)
                    offset += fan_out
                    self.slots.append(LayerSlot(c, name, layer, ws, bs, (fan_out, fan_in)))
        self.size = offset

    def unpack(self, theta):
        """Nested views ``nets[channel][name] -> [(W, b), ...]`` into ``theta``."""
        if theta.shape != (self.size,):
            raise InvalidInputError(f"theta has shape {theta.shape}, layout expects ({self.size},)")
        nets = [dict() for _ in range(self.spec.out_channels)]
        for s in self.slots:
            nets[s.channel].setdefault(s.net, []).append(
                (theta[s.weight].reshape(s.shape), theta[s.bias]))
        return nets


@dataclass
class ModelParams:
    spec: OperatorSpec
    theta: np.ndarray

    @property
    def layout(self) -> ParamLayout:
        return self.spec.layout

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.theta.copy())


def _block_rng(seed, channel, net_name):
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, channel] + list(net_name.encode())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def init_params(spec: OperatorSpec, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    Each (channel, net) block draws from its own stream keyed by name, so the
    trunk and function branches get identical weights whether or not the DMD
    branches are present.
    """
    layout = spec.layout
    theta = np.zeros(layout.size)
    rngs = {}
    for s in layout.slots:
        rng = rngs.setdefault((s.channel, s.net), _block_rng(seed, s.channel, s.net))
        fan_out, fan_in = s.shape
        a = np.sqrt(6.0 / (fan_in + fan_out))
        theta[s.weight] = rng.uniform(-a, a, size=fan_in * fan_out)
    return ModelParams(spec, theta)


# -- forward / backward ----------------------------------------------------------

def mlp_forward(layers, x, trace=None):
    """tanh on every hidden layer, linear output layer.

    ``layers`` is a list of (W, b) with W of shape (fan_out, fan_in). ``x`` may be
    a vector or a (batch, fan_in) matrix. When ``trace`` is a list the layer
    inputs are appended to it for the backward pass.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != layers[0][0].shape[1]:
        raise InvalidInputError(f"input width {h.shape[-1]} != layer fan-in {layers[0][0].shape[1]}")
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        if trace is not None:
            trace.append(h)
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    return h


def mlp_backward(layers, trace, dout, grads):
    """Accumulate dW, db into ``grads`` (list of (dW, db) views); returns None.

    The gradient w.r.t. the network input is not needed and not formed.
    """
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h = trace[i]
        gw, gb = grads[i]
        gw += delta.T @ h
        gb += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w) * (1.0 - h * h)


@dataclass
class OperatorInputs:
    """Inputs for a set of (sample, point) rows.

    Per-sample arrays have one row per distinct sample; ``coords`` one row per
    distinct point. ``sample_index``/``point_index`` select them for each row.
    """
    conditions: np.ndarray  # (S, c)
    coords: np.ndarray  # (P, d) in [0, 1]
    sample_index: np.ndarray  # (R,)
    point_index: np.ndarray  # (R,)
    modes: Optional[np.ndarray] = None  # (S, 2nr)
    dynamics: Optional[np.ndarray] = None  # (S, 4r)
    # already transformed branch inputs {name: (S, w)}; bypasses the input transform
    prepared: Optional[dict] = None

    @property
    def n_rows(self):
        return self.sample_index.shape[0]


@dataclass
class ForwardTrace:
    trunk: list  # per channel (P, p)
    branches: list  # per channel {name: (S, p)}
    fused: list  # per channel (S, p) product of all branch outputs
    outputs: np.ndarray  # (R, C)
    tapes: list  # per channel {name: [layer inputs]}


def _transform(spec: OperatorSpec, name: str, x):
    stats = spec.stat_arrays(name)
    if stats is None:
        return x
    return (x - stats[0]) / stats[1]


def branch_inputs(spec: OperatorSpec, inputs: OperatorInputs):
    """Transformed input matrix for every branch name."""
    if inputs.prepared is not None:
        return inputs.prepared
    if spec.dmd_branches_enabled and (inputs.modes is None or inputs.dynamics is None):
        raise InvalidInputError("DMD branches are enabled but no DMD encoding was provided")
    cond = np.asarray(inputs.conditions, dtype=np.float64)
    if cond.ndim != 2 or cond.shape[1] < spec.condition_width:
        raise InvalidInputError(f"conditions must be (S, >= {spec.condition_width}), got {cond.shape}")
    out = {}
    for j, (a, b) in enumerate(spec.condition_slices):
        out[f"branch{j}"] = _transform(spec, f"branch{j}", cond[:, a:b])
    if spec.dmd_branches_enabled:
        out["modes"] = _transform(spec, "modes", np.asarray(inputs.modes, dtype=np.float64))
        out["dynamics"] = _transform(spec, "dynamics", np.asarray(inputs.dynamics, dtype=np.float64))
    return out


def trunk_input(spec: OperatorSpec, coords):
    return spec.coord_scale * (2.0 * np.asarray(coords, dtype=np.float64) - 1.0)


def forward(params: ModelParams, inputs: OperatorInputs, keep_trace=False):
    """Batched forward pass; returns (R, C) outputs, plus a trace if requested."""
    spec = params.spec
    nets = spec.layout.unpack(params.theta)
    xb = branch_inputs(spec, inputs)
    xt = trunk_input(spec, inputs.coords)
    si, pi = inputs.sample_index, inputs.point_index
    outputs = np.empty((inputs.n_rows, spec.out_channels))
    trunks, branches, fused, tapes = [], [], [], []
    for c in range(spec.out_channels):
        tape = {name: [] for name in nets[c]} if keep_trace else {}
        t = mlp_forward(nets[c]["trunk"], xt, tape.get("trunk"))
        outs = {}
        prod = None
        for name in spec.branch_names():
            g = mlp_forward(nets[c][name], xb[name], tape.get(name))
            outs[name] = g
            prod = g if prod is None else prod * g
        outputs[:, c] = (t[pi] * prod[si]).sum(axis=1)
        if keep_trace:
            trunks.append(t)
            branches.append(outs)
            fused.append(prod)
            tapes.append(tape)
    if keep_trace:
        return outputs, ForwardTrace(trunks, branches, fused, outputs, tapes)
    return outputs


def backward(params: ModelParams, inputs: OperatorInputs, trace: ForwardTrace, dout,
             out=None) -> np.ndarray:
    """Gradient of sum(dout * outputs) with respect to theta.

    ``out``, when given, is zeroed and filled in place.
    """
    spec = params.spec
    layout = spec.layout
    nets = layout.unpack(params.theta)
    if out is None:
        grad = np.zeros(layout.size)
    else:
        grad = out
        grad.fill(0.0)
    gnets = layout.unpack(grad)
    si, pi = inputs.sample_index, inputs.point_index
    n_samples = inputs.conditions.shape[0]
    n_points = inputs.coords.shape[0]
    names = spec.branch_names()
    for c in range(spec.out_channels):
        g = dout[:, c][:, None]
        t, prod = trace.trunk[c], trace.fused[c]
        d_trunk = np.zeros((n_points, spec.latent_p))
        np.add.at(d_trunk, pi, g * prod[si])
        d_prod = np.zeros((n_samples, spec.latent_p))
        np.add.at(d_prod, si, g * t[pi])
        mlp_backward(nets[c]["trunk"], trace.tapes[c]["trunk"], d_trunk, gnets[c]["trunk"])
        outs = trace.branches[c]
        for k, name in enumerate(names):
            others = d_prod
            for j, other in enumerate(names):
                if j != k:
                    others = others * outs[other]
            mlp_backward(nets[c][name], trace.tapes[c][name], others, gnets[c][name])
    return grad


def operator_forward(params: ModelParams, condition, coord, encoding=None) -> np.ndarray:
    """Single-point evaluation; returns one value per output channel."""
    enc_modes = enc_dyn = None
    if encoding is not None:
        enc_modes = np.asarray(encoding.mode_vec)[None, :]
        enc_dyn = np.asarray(encoding.dyn_vec)[None, :]
    elif params.spec.dmd_branches_enabled:
        raise InvalidInputError("DMD branches are enabled but no encoding was provided")
    inputs = OperatorInputs(
        conditions=np.asarray(condition, dtype=np.float64)[None, :],
        coords=np.asarray(coord, dtype=np.float64)[None, :],
        sample_index=np.zeros(1, dtype=np.intp),
        point_index=np.zeros(1, dtype=np.intp),
        modes=enc_modes,
        dynamics=enc_dyn,
    )
    return forward(params, inputs)[0]


def operator_forward_batch(params: ModelParams, inputs: OperatorInputs) -> np.ndarray:
    """(R, C) predictions; branch and trunk outputs are computed once per distinct sample/point."""
    return forward(params, inputs)


# -- checkpoint file -----------------------------------------------------------------

def checkpoint_bytes(params: ModelParams) -> bytes:
    """magic | version u32 | spec: u32 length + UTF-8 JSON | theta: u64 length + f64 payload"""
    spec_bytes = json.dumps(params.spec.to_dict(), sort_keys=True).encode("utf-8")
    theta = np.ascontiguousarray(params.theta, dtype="<f8")
    return b"".join([CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(spec_bytes)),
                     spec_bytes, struct.pack("<Q", theta.size), theta.tobytes()])


def save_checkpoint(params: ModelParams, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(params))


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad magic, not a DMDNOMP1 checkpoint", field="magic")
    pos = 8

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError("truncated file", field=what)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}", field="version")
    (spec_len,) = struct.unpack("<I", take(4, "spec_length"))
    try:
        spec = OperatorSpec.from_dict(json.loads(take(spec_len, "spec").decode("utf-8")))
    except (ValueError, TypeError, KeyError) as exc:
        raise FormatError(f"invalid spec record: {exc}", field="spec") from exc
    (n,) = struct.unpack("<Q", take(8, "theta_length"))
    expected = spec.layout.size
    if n != expected:
        raise FormatError(f"theta length {n} does not match spec layout {expected}", field="theta_length")
    theta = np.frombuffer(take(8 * n, "theta"), dtype="<f8").astype(np.float64)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", field="theta")
    return ModelParams(spec, theta)
