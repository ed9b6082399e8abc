"""Declarative network construction, initialization and checkpointing.

Networks are flat lists of :class:`LayerSpec`; symbolic shape inference
runs over the spec before any parameter is allocated, so geometry errors
surface at build time.  Feature taps expose intermediate activations by
name for the perceptual losses.
"""

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as tc
from .tensor import Tensor, ShapeError

LAYER_KINDS = ("conv", "deconv", "dense", "residual_block", "activation", "norm",
               "flatten", "add_input")

CKPT_MAGIC = b"DIATCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int = 0      # conv/deconv output channels, residual width
    kernel: int = 0
    pad: int = 0
    stride: int = 1
    out_pad: int = 0
    units: int = 0         # dense output width
    fn: str = ""           # activation name: relu | leaky_relu | sigmoid
    slope: float = 0.2
    norm: bool = False     # residual blocks: normalize between convs
    offset: int = 0        # add_input: first input channel to add
    zero_init: bool = False  # start this layer's weights at zero
    tap: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "deconv"):
            if self.channels < 1 or self.kernel < 1 or self.pad < 0 or self.stride < 1:
                raise ValueError(f"invalid {self.kind} geometry: {self}")
        if self.kind == "residual_block" and self.channels < 1:
            raise ValueError("residual_block needs a positive channel count")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense needs positive units")
        if self.kind == "add_input" and self.offset < 0:
            raise ValueError("add_input needs a nonnegative channel offset")


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple       # unbatched, e.g. (3, 32, 32)
    layers: tuple
    scale_factor: float = 1.0

    def shapes(self):
        return infer_shapes(self.layers, self.input_shape)

    def to_json(self):
        return json.dumps(
            {
                "name": self.name,
                "input_shape": list(self.input_shape),
                "scale_factor": self.scale_factor,
                "layers": [asdict(l) for l in self.layers],
            },
            sort_keys=True,
        )

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).digest()


def infer_shapes(layers, input_shape):
    """Symbolic per-layer output shapes for an unbatched input."""
    shapes = []
    shape = tuple(input_shape)
    for spec in layers:
        if spec.kind == "conv":
            c, h, w = shape
            ho = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            wo = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(f"conv reduces {shape} to nonpositive extent")
            shape = (spec.channels, ho, wo)
        elif spec.kind == "deconv":
            c, h, w = shape
            ho = (h - 1) * spec.stride + spec.kernel - 2 * spec.pad + spec.out_pad
            wo = (w - 1) * spec.stride + spec.kernel - 2 * spec.pad + spec.out_pad
            if ho < 1 or wo < 1:
                raise ShapeError(f"deconv reduces {shape} to nonpositive extent")
            shape = (spec.channels, ho, wo)
        elif spec.kind == "residual_block":
            if shape[0] != spec.channels:
                raise ShapeError(
                    f"residual_block expects {spec.channels} channels, got {shape[0]}"
                )
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1:
                raise ShapeError("dense requires a flattened input")
            shape = (spec.units,)
        elif spec.kind == "add_input":
            if len(shape) != 3 or len(input_shape) != 3:
                raise ShapeError("add_input requires spatial activations")
            c, h, w = shape
            ci, hi, wi = input_shape
            if (hi, wi) != (h, w) or spec.offset + c > ci:
                raise ShapeError(
                    f"add_input cannot add input channels "
                    f"[{spec.offset}:{spec.offset + c}] of {tuple(input_shape)} "
                    f"to activation {shape}")
        elif spec.kind in ("activation", "norm"):
            pass
        shapes.append(shape)
    return shapes


class Network:
    """Instantiated parameter set for a NetworkSpec with named taps."""

    def __init__(self, spec):
        self.spec = spec
        self.shapes = spec.shapes()  # validates geometry up front
        self.params = {}
        self._allocate()

    def _allocate(self):
        shape = tuple(self.spec.input_shape)
        for i, spec in enumerate(self.spec.layers):
            prefix = f"{i:02d}"
            cin = shape[0]
            if spec.kind == "conv":
                self.params[f"{prefix}.weight"] = self._param(
                    (spec.channels, cin, spec.kernel, spec.kernel))
                self.params[f"{prefix}.bias"] = self._param((spec.channels,))
            elif spec.kind == "deconv":
                self.params[f"{prefix}.weight"] = self._param(
                    (cin, spec.channels, spec.kernel, spec.kernel))
                self.params[f"{prefix}.bias"] = self._param((spec.channels,))
            elif spec.kind == "residual_block":
                c = spec.channels
                self.params[f"{prefix}.conv1.weight"] = self._param((c, c, 3, 3))
                self.params[f"{prefix}.conv1.bias"] = self._param((c,))
                self.params[f"{prefix}.conv2.weight"] = self._param((c, c, 3, 3))
                self.params[f"{prefix}.conv2.bias"] = self._param((c,))
            elif spec.kind == "dense":
                self.params[f"{prefix}.weight"] = self._param((spec.units, shape[0]))
                self.params[f"{prefix}.bias"] = self._param((spec.units,))
            shape = self.shapes[i]

    @staticmethod
    def _param(shape):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def parameters(self):
        return list(self.params.values())

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False
        return self

    @property
    def frozen(self):
        return all(not p.requires_grad for p in self.params.values())

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def forward(self, x, taps=None):
        """Run the network; if taps is a dict, labeled outputs are stored in it."""
        x0 = x
        for i, spec in enumerate(self.spec.layers):
            prefix = f"{i:02d}"
            if spec.kind == "conv":
                x = tc.conv2d(x, self.params[f"{prefix}.weight"],
                              self.params[f"{prefix}.bias"], spec.pad, spec.stride)
            elif spec.kind == "deconv":
                x = tc.conv_transpose2d(x, self.params[f"{prefix}.weight"],
                                        self.params[f"{prefix}.bias"],
                                        spec.pad, spec.stride, spec.out_pad)
            elif spec.kind == "residual_block":
                h = tc.conv2d(x, self.params[f"{prefix}.conv1.weight"],
                              self.params[f"{prefix}.conv1.bias"], 1, 1)
                if spec.norm:
                    h = tc.instance_norm(h)
                h = tc.relu(h)
                h = tc.conv2d(h, self.params[f"{prefix}.conv2.weight"],
                              self.params[f"{prefix}.conv2.bias"], 1, 1)
                if spec.norm:
                    h = tc.instance_norm(h)
                x = tc.add(x, h)
            elif spec.kind == "activation":
                if spec.fn == "relu":
                    x = tc.relu(x)
                elif spec.fn == "leaky_relu":
                    x = tc.leaky_relu(x, spec.slope)
                elif spec.fn == "sigmoid":
                    x = tc.sigmoid(x)
                else:
                    raise ValueError(f"unknown activation {spec.fn!r}")
            elif spec.kind == "norm":
                x = tc.instance_norm(x)
            elif spec.kind == "dense":
                x = tc.dense(x, self.params[f"{prefix}.weight"],
                             self.params[f"{prefix}.bias"])
            elif spec.kind == "flatten":
                x = tc.reshape(x, (x.shape[0], -1)) if x.ndim == 4 else tc.reshape(x, -1)
            elif spec.kind == "add_input":
                x = tc.add(x, tc.slice_channels(x0, spec.offset, x.shape[-3]))
            if taps is not None and spec.tap:
                taps[spec.tap] = x
        return x

    def __call__(self, x, taps=None):
        return self.forward(x, taps)


def init_params(net, seed):
    """Fan-in-scaled uniform init; residual second convs and layers flagged
    zero_init start at zero."""
    rng = np.random.default_rng(seed)
    for name, p in net.params.items():
        if name.endswith("bias"):
            p.data = np.zeros(p.shape, dtype=np.float32)
            continue
        layer = net.spec.layers[int(name.split(".")[0])]
        if ".conv2.weight" in name or layer.zero_init:
            p.data = np.zeros(p.shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(p.shape[1:])) if p.ndim > 1 else p.shape[0]
        limit = math.sqrt(1.0 / max(fan_in, 1))
        p.data = rng.uniform(-limit, limit, size=p.shape).astype(np.float32)
    return net


# ---------------------------------------------------------------------------
# architecture builders

def scaled_channels(base, scale):
    """Round scaled widths up to a multiple of 4, floor 8."""
    if scale == 1.0:
        return base
    return max(8, 4 * math.ceil(base * scale / 4))


def scaled_size(scale, base=128):
    s = round(base * scale)
    if s < 8 or s % 4 != 0:
        raise ValueError(f"scale_factor {scale} gives unusable input size {s}")
    return s


def _act(fn, tap="", slope=0.2):
    return LayerSpec("activation", fn=fn, slope=slope, tap=tap)


def _generator_block(channels, kernel, pad, stride, use_norm, kind="conv", out_pad=0, tap=""):
    layers = [LayerSpec(kind, channels=channels, kernel=kernel, pad=pad,
                        stride=stride, out_pad=out_pad)]
    if use_norm:
        layers.append(LayerSpec("norm"))
    layers.append(_act("relu", tap=tap))
    return layers


def _transform_layers(scale, use_norm):
    c32 = scaled_channels(32, scale)
    c64 = scaled_channels(64, scale)
    c128 = scaled_channels(128, scale)
    layers = []
    layers += _generator_block(c32, 9, 4, 1, use_norm)
    layers += _generator_block(c64, 3, 1, 2, use_norm)
    layers += _generator_block(c128, 3, 1, 2, use_norm)
    for _ in range(5):
        layers.append(LayerSpec("residual_block", channels=c128, norm=use_norm))
    layers += _generator_block(c64, 3, 1, 2, use_norm, kind="deconv", out_pad=1)
    layers += _generator_block(c32, 3, 1, 2, use_norm, kind="deconv", out_pad=0)
    layers.append(LayerSpec("deconv", channels=3, kernel=10, pad=4, stride=1))
    layers.append(_act("sigmoid"))
    return tuple(layers)


def build_transform_net(scale_factor=0.25, use_norm=True, name="transform"):
    s = scaled_size(scale_factor)
    spec = NetworkSpec(name, (3, s, s), _transform_layers(scale_factor, use_norm),
                       scale_factor)
    return Network(spec)


def build_reconstruction_net(scale_factor=0.25, use_norm=True):
    return build_transform_net(scale_factor, use_norm, name="reconstruction")


def build_global_enhancer(scale_factor=0.25, use_norm=True):
    """Transform-net trunk predicting a sharpening residual added to its
    (blurred) input; zero-initialized head so training starts at identity."""
    s = scaled_size(scale_factor)
    trunk = _transform_layers(scale_factor, use_norm)[:-2]
    layers = trunk + (
        LayerSpec("deconv", channels=3, kernel=10, pad=4, stride=1,
                  zero_init=True),
        LayerSpec("add_input", channels=3, offset=0),
    )
    spec = NetworkSpec("global_enhancer", (3, s, s), layers, scale_factor)
    return Network(spec)


def build_discriminator(scale_factor=0.25):
    s = scaled_size(scale_factor)
    c32 = scaled_channels(32, scale_factor)
    c64 = scaled_channels(64, scale_factor)
    c128 = scaled_channels(128, scale_factor)
    fc = scaled_channels(1000, scale_factor)
    layers = [
        LayerSpec("conv", channels=c32, kernel=8, pad=3, stride=2),
        _act("leaky_relu"),
        LayerSpec("conv", channels=c32, kernel=3, pad=1, stride=1),
        _act("leaky_relu"),
        LayerSpec("conv", channels=c64, kernel=4, pad=1, stride=2),
        _act("leaky_relu"),
        LayerSpec("conv", channels=c64, kernel=3, pad=1, stride=1),
        _act("leaky_relu", tap="conv4"),
        LayerSpec("conv", channels=c128, kernel=4, pad=1, stride=2),
        _act("leaky_relu", tap="conv5"),
        LayerSpec("conv", channels=c128, kernel=4, pad=1, stride=2),
        _act("leaky_relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=fc),
        _act("leaky_relu"),
        LayerSpec("dense", units=1),
        _act("sigmoid"),
    ]
    spec = NetworkSpec("discriminator", (3, s, s), tuple(layers), scale_factor)
    return Network(spec)


def build_denoising_net(width=32):
    layers = (
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("relu"),
        LayerSpec("conv", channels=3, kernel=3, pad=1, stride=1),
    )
    # shape-preserving on any input size; placeholder extent for allocation
    spec = NetworkSpec("denoising", (3, 32, 32), layers)
    return Network(spec)


def build_local_enhancer(width=32):
    """4-layer FCN over the source image stacked with the transformed image.

    Predicts a correction added to the transformed image (channels 3:6 of
    the stacked input); the zero-initialized head makes the untrained net
    the identity on the transformed image.
    """
    layers = (
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("relu"),
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("relu"),
        LayerSpec("conv", channels=width, kernel=3, pad=1, stride=1),
        _act("relu"),
        LayerSpec("conv", channels=3, kernel=3, pad=1, stride=1, zero_init=True),
        LayerSpec("add_input", channels=3, offset=3),
    )
    spec = NetworkSpec("local_enhancer", (6, 32, 32), layers)
    return Network(spec)


def build_identity_embedder(scale_factor=0.25, n_identities=64):
    s = scaled_size(scale_factor)
    widths = [scaled_channels(c, scale_factor) for c in (32, 64, 64, 128, 128)]
    strides = [1, 2, 1, 2, 2]
    layers = []
    for i, (c, st) in enumerate(zip(widths, strides), start=1):
        layers.append(LayerSpec("conv", channels=c, kernel=3, pad=1, stride=st))
        layers.append(_act("relu", tap=f"conv{i}"))
    layers.append(LayerSpec("flatten"))
    layers.append(LayerSpec("dense", units=n_identities))
    spec = NetworkSpec("identity_embedder", (3, s, s), tuple(layers), scale_factor)
    return Network(spec)


# ---------------------------------------------------------------------------
# checkpoint serialization
#
# Layout (all integers little-endian):
#   magic "DIATCKPT" | version u32 | name_len u16 + utf-8 name
#   spec sha256 (32 bytes) | step u64 | rng_len u32 + utf-8 json
#   param count u32, then per entry:
#     name_len u16 + utf-8 | dtype u8 (0=f32, 1=f64) | ndim u8 | dims u32...
#     | raw little-endian data
#   optimizer blob count u32, same entry layout.

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _write_entry(out, name, arr):
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES[arr.dtype]
    nb = name.encode()
    out.append(struct.pack("<H", len(nb)))
    out.append(nb)
    out.append(struct.pack("<BB", code, arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
    out.append(arr.astype(_DTYPES[code], copy=False).tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        b = self.buf[self.pos:self.pos + n]
        if len(b) != n:
            raise ValueError("truncated checkpoint")
        self.pos += n
        return b

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def entry(self):
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode()
        code, ndim = self.unpack("<BB")
        dims = self.unpack(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[code]
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(self.take(n * dt.itemsize), dtype=dt).reshape(dims)
        return name, arr.astype(dt.newbyteorder("=")).reshape(dims)


def _flatten_opt_state(opt_state):
    entries = []
    if opt_state is None:
        return entries
    entries.append(("t", np.array([float(opt_state["t"])], dtype=np.float64)))
    for name in sorted(opt_state["m"]):
        entries.append((f"m.{name}", opt_state["m"][name]))
        entries.append((f"v.{name}", opt_state["v"][name]))
    return entries


def _unflatten_opt_state(entries):
    if not entries:
        return None
    state = {"t": 0, "m": {}, "v": {}}
    for name, arr in entries:
        if name == "t":
            state["t"] = int(arr[0])
        elif name.startswith("m."):
            state["m"][name[2:]] = arr
        elif name.startswith("v."):
            state["v"][name[2:]] = arr
    return state


def save_checkpoint(path, net, opt_state=None, step=0, rng_state=""):
    """Serialize parameters (+ optional Adam state, counters, RNG state)."""
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    nb = net.spec.name.encode()
    out.append(struct.pack("<H", len(nb)))
    out.append(nb)
    out.append(net.spec.hash())
    out.append(struct.pack("<Q", int(step)))
    rb = rng_state.encode() if rng_state else b""
    out.append(struct.pack("<I", len(rb)))
    out.append(rb)
    out.append(struct.pack("<I", len(net.params)))
    for name in net.params:
        _write_entry(out, name, net.params[name].data)
    opt_entries = _flatten_opt_state(opt_state)
    out.append(struct.pack("<I", len(opt_entries)))
    for name, arr in opt_entries:
        _write_entry(out, name, arr)
    blob = b"".join(out)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load_checkpoint(path, net):
    """Restore parameters into net; returns (opt_state, step, rng_state).

    Rejects checkpoints whose spec hash differs from the given network.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(8) != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (nlen,) = r.unpack("<H")
    r.take(nlen)  # network identifier, informational
    spec_hash = r.take(32)
    if spec_hash != net.spec.hash():
        raise ValueError(f"{path}: spec hash mismatch for network {net.spec.name!r}")
    (step,) = r.unpack("<Q")
    (rlen,) = r.unpack("<I")
    rng_state = r.take(rlen).decode() if rlen else ""
    (n_params,) = r.unpack("<I")
    for _ in range(n_params):
        name, arr = r.entry()
        if name not in net.params:
            raise ValueError(f"{path}: unknown parameter {name!r}")
        if arr.shape != net.params[name].shape:
            raise ValueError(f"{path}: shape mismatch on {name!r}")
        net.params[name].data = arr.astype(np.float32)
    (n_opt,) = r.unpack("<I")
    opt_entries = [r.entry() for _ in range(n_opt)]
    return _unflatten_opt_state(opt_entries), step, rng_state
