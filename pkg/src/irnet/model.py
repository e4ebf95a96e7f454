"""The inverse-tone-mapping network family: improved residual blocks with
contrast-aware channel attention, multi-scale fusion, and (for the joint
super-resolution task) a two-stage sub-pixel upsampling head.

Also hosts the exact parameter / MAC accounting used by the architecture
auditor, and the binary checkpoint codec.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import records
from . import tensor_core as core
from .autograd import Parameter, Tape, Var
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor_core import ConvWeights, DTYPE, Tensor

MODE_ITM = "itm"
MODE_SRITM = "sritm"

CHECKPOINT_MAGIC = b"IRNC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters that fully determine the network graph."""
    mode: str
    n_blocks: int
    channels: int
    cca_reduction: int = 16
    lrelu_slope: float = 0.1
    cca_residual: bool = True
    scale: int = 4  # sritm only; the two-stage sub-pixel head fixes this at 4

    def validate(self):
        if self.mode not in (MODE_ITM, MODE_SRITM):
            raise ConfigError(f"mode must be '{MODE_ITM}' or '{MODE_SRITM}', got {self.mode!r}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.channels < 2 or self.channels % 2 != 0:
            raise ConfigError(f"channels must be a positive even number, got {self.channels}")
        if self.cca_reduction < 1 or self.channels % self.cca_reduction != 0:
            raise ConfigError(f"channels ({self.channels}) must be divisible by "
                              f"cca_reduction ({self.cca_reduction})")
        if not 0.0 < self.lrelu_slope < 1.0:
            raise ConfigError(f"lrelu_slope must lie in (0,1), got {self.lrelu_slope}")
        if self.mode == MODE_SRITM and self.scale != 4:
            raise ConfigError(f"the upsampling head supports scale=4 only, got {self.scale}")
        return self

    @staticmethod
    def default(mode: str) -> "ModelConfig":
        """Published defaults: 2 blocks / 64 channels for same-resolution
        conversion, 5 blocks / 64 channels for the joint x4 task."""
        if mode == MODE_ITM:
            return ModelConfig(mode=MODE_ITM, n_blocks=2, channels=64)
        if mode == MODE_SRITM:
            return ModelConfig(mode=MODE_SRITM, n_blocks=5, channels=64)
        raise ConfigError(f"unknown mode {mode!r}")


class ConvParams:
    """Kernel + bias Parameters of one convolution layer."""

    def __init__(self, name, out_c, in_c, k, rng=None):
        if rng is None:
            kernel = np.zeros((out_c, in_c, k, k), dtype=DTYPE)
        else:
            # Kaiming-normal: std = sqrt(2 / fan_in), fan_in = in_c * k * k
            std = np.sqrt(2.0 / (in_c * k * k))
            kernel = rng.normal(0.0, std, size=(out_c, in_c, k, k)).astype(DTYPE)
        self.kernel = Parameter(kernel, f"{name}.kernel")
        self.bias = Parameter(np.zeros(out_c, dtype=DTYPE), f"{name}.bias")

    def weights(self) -> ConvWeights:
        return ConvWeights(self.kernel.value, self.bias.value)

    def parameters(self):
        return [self.kernel, self.bias]


@dataclass
class IRBlockParams:
    """Improved residual block: two 3x3 convs through a half-width bottleneck,
    a 1x1 fuse of input+refined, then a 1x1 over the fused/intermediate concat."""
    conv1: ConvParams  # 3x3, C -> C/2
    conv2: ConvParams  # 3x3, C/2 -> C
    fuse: ConvParams   # 1x1, C -> C/2
    out: ConvParams    # 1x1, C -> C

    def parameters(self):
        return (self.conv1.parameters() + self.conv2.parameters()
                + self.fuse.parameters() + self.out.parameters())


@dataclass
class CCAParams:
    """Contrast-aware channel attention: squeeze by reduction r, expand back."""
    down: ConvParams  # 1x1, C -> C/r
    up: ConvParams    # 1x1, C/r -> C

    def parameters(self):
        return self.down.parameters() + self.up.parameters()


class IRNetModel:
    """Assembled parameterized network with a stable named-parameter order."""

    def __init__(self, config: ModelConfig, head, groups, fusion1, fusion2,
                 tail, up1=None, up2=None):
        self.config = config
        self.head = head
        self.groups = groups  # list of (IRBlockParams, CCAParams)
        self.fusion1 = fusion1
        self.fusion2 = fusion2
        self.tail = tail
        self.up1 = up1
        self.up2 = up2

    def parameters(self) -> list[Parameter]:
        params = list(self.head.parameters())
        for irb, cca in self.groups:
            params += irb.parameters() + cca.parameters()
        params += self.fusion1.parameters() + self.fusion2.parameters()
        params += self.tail.parameters()
        if self.up1 is not None:
            params += self.up1.parameters() + self.up2.parameters()
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x: Tensor, tape: Tape | None = None, use_f1: bool = True) -> Var:
        return irnet_forward(x, self, tape=tape, use_f1=use_f1)

    def predict(self, x: Tensor) -> Tensor:
        """Inference convenience: forward with no tape, unwrap the array."""
        return self.forward(x).value


def build(config: ModelConfig, seed: int) -> IRNetModel:
    """Construct the network with Kaiming-normal kernels and zero biases from
    a seeded generator; a fixed seed gives bit-identical parameters."""
    config.validate()
    rng = np.random.default_rng(seed)
    c = config.channels
    head = ConvParams("head", c, 3, 1, rng)
    groups = []
    for i in range(1, config.n_blocks + 1):
        irb = IRBlockParams(
            conv1=ConvParams(f"block{i}.irb.conv1", c // 2, c, 3, rng),
            conv2=ConvParams(f"block{i}.irb.conv2", c, c // 2, 3, rng),
            fuse=ConvParams(f"block{i}.irb.fuse", c // 2, c, 1, rng),
            out=ConvParams(f"block{i}.irb.out", c, c, 1, rng),
        )
        cca = CCAParams(
            down=ConvParams(f"block{i}.cca.down", c // config.cca_reduction, c, 1, rng),
            up=ConvParams(f"block{i}.cca.up", c, c // config.cca_reduction, 1, rng),
        )
        groups.append((irb, cca))
    fusion1 = ConvParams("fusion1", c, config.n_blocks * c, 1, rng)
    fusion2 = ConvParams("fusion2", c, c, 3, rng)
    if config.mode == MODE_ITM:
        tail = ConvParams("tail", 3, c, 3, rng)
        up1 = up2 = None
    else:
        tail = ConvParams("tail", c, c, 3, rng)
        up1 = ConvParams("up1", 4 * c, c, 3, rng)
        up2 = ConvParams("up2", 12, c, 3, rng)
    return IRNetModel(config, head, groups, fusion1, fusion2, tail, up1, up2)


# ---------------------------------------------------------------------------
# forward graphs (one code path for training and inference)
# ---------------------------------------------------------------------------

def _conv(tape, x: Var, layer: ConvParams) -> Var:
    if tape is None:
        return Var(core.conv2d(x.value, layer.weights()))
    return ag.conv2d(tape, x, tape.watch(layer.kernel), tape.watch(layer.bias))


def _irb(tape, x: Var, p: IRBlockParams, slope: float, use_f1: bool) -> Var:
    f1 = ag.leaky_relu(tape, _conv(tape, x, p.conv1), slope)
    f2 = _conv(tape, f1, p.conv2)
    ffuse = _conv(tape, ag.add(tape, x, f2), p.fuse)
    if not use_f1:
        f1 = ag.constant(np.zeros_like(f1.value))
    return _conv(tape, ag.concat_channels(tape, [ffuse, f1]), p.out)


def _cca(tape, x: Var, p: CCAParams, residual: bool) -> Var:
    z = ag.global_contrast_pool(tape, x)
    w = ag.sigmoid(tape, _conv(tape, ag.relu(tape, _conv(tape, z, p.down)), p.up))
    scaled = ag.scale_channels(tape, x, w)
    return ag.add(tape, x, scaled) if residual else scaled


def irb_forward(x: Tensor, p: IRBlockParams, slope: float,
                use_f1: bool = True) -> Tensor:
    """Array-level improved-residual-block forward (no gradient recording)."""
    return _irb(None, Var(x), p, slope, use_f1).value


def cca_forward(x: Tensor, p: CCAParams, residual: bool = True) -> Tensor:
    """Array-level channel-attention forward (no gradient recording)."""
    return _cca(None, Var(x), p, residual).value


def irnet_forward(x: Tensor, m: IRNetModel, tape: Tape | None = None,
                  use_f1: bool = True) -> Var:
    """Full network forward pass.

    Feature i+1 = feature i + CCA(IRB(feature i)); the post-skip features of
    all blocks are concatenated for multi-scale fusion, then the tail (plus,
    for the x4 task, the two-stage sub-pixel head) reconstructs the output.
    """
    core.check_tensor(x, "network input")
    if x.shape[1] != 3:
        raise ShapeError(f"network input must have 3 channels, got {x.shape[1]}",
                         expected=3, actual=x.shape[1])
    cfg = m.config
    feat = _conv(tape, Var(x), m.head)
    scales = []
    for irb, cca in m.groups:
        refined = _cca(tape, _irb(tape, feat, irb, cfg.lrelu_slope, use_f1),
                       cca, cfg.cca_residual)
        feat = ag.add(tape, feat, refined)
        scales.append(feat)
    fused = ag.leaky_relu(tape, _conv(tape, ag.concat_channels(tape, scales),
                                      m.fusion1), cfg.lrelu_slope)
    fused = _conv(tape, fused, m.fusion2)
    out = _conv(tape, fused, m.tail)
    if cfg.mode == MODE_SRITM:
        out = ag.pixel_shuffle(tape, _conv(tape, out, m.up1), 2)
        out = ag.relu(tape, out)
        out = ag.pixel_shuffle(tape, _conv(tape, out, m.up2), 2)
    return out


def predict_tiled(model: IRNetModel, x: Tensor, tile: int, overlap: int = 16) -> Tensor:
    """Memory-bounded inference: run overlapping tiles and blend them.

    Tiles overlap by ``overlap`` pixels; each tile's contribution is trimmed
    by overlap/2 at interior edges (so seams fall where neighbouring tiles
    agree) and any remaining overlap is averaged. Convolution edge effects
    deeper than overlap/2 are eliminated, but the channel-attention gate
    pools per-tile statistics, so tiled output is an approximation of the
    full-image result, not a bit-exact match.
    """
    if tile < 2 * overlap:
        raise ConfigError(f"tile size {tile} must be at least twice the "
                          f"overlap {overlap}")
    n, c, h, w = x.shape
    s = 4 if model.config.mode == MODE_SRITM else 1
    if h <= tile and w <= tile:
        return model.predict(x)
    acc = np.zeros((n, 3, h * s, w * s), dtype=np.float64)
    weight = np.zeros((1, 1, h * s, w * s), dtype=np.float64)
    step = tile - overlap
    trim = overlap // 2
    ys = sorted({min(y, max(h - tile, 0)) for y in range(0, h, step)})
    xs = sorted({min(xx, max(w - tile, 0)) for xx in range(0, w, step)})
    for y0 in ys:
        for x0 in xs:
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            out = model.predict(np.ascontiguousarray(x[:, :, y0:y1, x0:x1]))
            ty0 = trim if y0 > 0 else 0
            tx0 = trim if x0 > 0 else 0
            ty1 = trim if y1 < h else 0
            tx1 = trim if x1 < w else 0
            oy0, oy1 = (y0 + ty0) * s, (y1 - ty1) * s
            ox0, ox1 = (x0 + tx0) * s, (x1 - tx1) * s
            acc[:, :, oy0:oy1, ox0:ox1] += out[:, :, ty0 * s:(y1 - y0 - ty1) * s,
                                               tx0 * s:(x1 - x0 - tx1) * s]
            weight[:, :, oy0:oy1, ox0:ox1] += 1.0
    return (acc / np.maximum(weight, 1.0)).astype(DTYPE)


# ---------------------------------------------------------------------------
# exact cost accounting
# ---------------------------------------------------------------------------

def _conv_param_count(in_c, out_c, k):
    return out_c * in_c * k * k + out_c


def count_params(config: ModelConfig) -> int:
    """Exact scalar-parameter count, in closed form (no model built)."""
    config.validate()
    c, n, r = config.channels, config.n_blocks, config.cca_reduction
    total = _conv_param_count(3, c, 1)                      # head
    per_block = (_conv_param_count(c, c // 2, 3)            # irb.conv1
                 + _conv_param_count(c // 2, c, 3)          # irb.conv2
                 + _conv_param_count(c, c // 2, 1)          # irb.fuse
                 + _conv_param_count(c, c, 1)               # irb.out
                 + _conv_param_count(c, c // r, 1)          # cca.down
                 + _conv_param_count(c // r, c, 1))         # cca.up
    total += n * per_block
    total += _conv_param_count(n * c, c, 1)                 # fusion1
    total += _conv_param_count(c, c, 3)                     # fusion2
    if config.mode == MODE_ITM:
        total += _conv_param_count(c, 3, 3)                 # tail
    else:
        total += _conv_param_count(c, c, 3)                 # tail
        total += _conv_param_count(c, 4 * c, 3)             # up1
        total += _conv_param_count(c, 12, 3)                # up2
    return total


def count_macs(config: ModelConfig, h: int, w: int) -> tuple[int, int]:
    """Multiply-accumulates and FLOPs (=2*MACs) for one (h, w) input.

    Each convolution contributes k*k*Cin*Cout*Hout*Wout; the attention convs
    act on pooled 1x1 descriptors. For the x4 task the second upsampling conv
    runs at twice the input resolution (between the two shuffle stages).
    """
    config.validate()
    if h < 1 or w < 1:
        raise ConfigError(f"input dims must be positive, got {h}x{w}")
    c, n, r = config.channels, config.n_blocks, config.cca_reduction
    hw = h * w

    def conv_macs(in_c, out_c, k, pixels):
        return k * k * in_c * out_c * pixels

    macs = conv_macs(3, c, 1, hw)
    macs += n * (conv_macs(c, c // 2, 3, hw) + conv_macs(c // 2, c, 3, hw)
                 + conv_macs(c, c // 2, 1, hw) + conv_macs(c, c, 1, hw))
    macs += n * (conv_macs(c, c // r, 1, 1) + conv_macs(c // r, c, 1, 1))
    macs += conv_macs(n * c, c, 1, hw)
    macs += conv_macs(c, c, 3, hw)
    if config.mode == MODE_ITM:
        macs += conv_macs(c, 3, 3, hw)
    else:
        macs += conv_macs(c, c, 3, hw)          # tail
        macs += conv_macs(c, 4 * c, 3, hw)      # up1 at input resolution
        macs += conv_macs(c, 12, 3, 4 * hw)     # up2 after the first x2 shuffle
    return macs, 2 * macs


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = ("mode", "n_blocks", "channels", "cca_reduction",
                  "lrelu_slope", "cca_residual", "scale")


def _config_to_text(config: ModelConfig) -> str:
    lines = []
    for k in _CONFIG_FIELDS:
        v = getattr(config, k)
        if isinstance(v, bool):
            v = int(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed config line {line!r}")
        k, v = line.split("=", 1)
        kv[k] = v
    try:
        return ModelConfig(
            mode=kv["mode"],
            n_blocks=int(kv["n_blocks"]),
            channels=int(kv["channels"]),
            cca_reduction=int(kv["cca_reduction"]),
            lrelu_slope=float(kv["lrelu_slope"]),
            cca_residual=bool(int(kv["cca_residual"])),
            scale=int(kv["scale"]),
        ).validate()
    except (KeyError, ValueError, ConfigError) as exc:
        raise CheckpointError(f"invalid checkpoint config record: {exc}") from exc


def save_checkpoint(model: IRNetModel, config: ModelConfig, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    records.write_u32(buf, CHECKPOINT_VERSION)
    records.write_bytes(buf, _config_to_text(config).encode("utf-8"))
    for p in model.parameters():
        records.write_tensor_record(buf, p.name, p.value)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def save_named_arrays(named_arrays, config: ModelConfig, path) -> None:
    """Checkpoint an explicit (name, array) sequence (e.g. a best-so-far
    parameter snapshot) without needing a live model."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    records.write_u32(buf, CHECKPOINT_VERSION)
    records.write_bytes(buf, _config_to_text(config).encode("utf-8"))
    for name, arr in named_arrays:
        records.write_tensor_record(buf, name, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expect_config: ModelConfig | None = None):
    """Restore (model, config) from a checkpoint file.

    When ``expect_config`` is given, a checkpoint written for a different
    architecture is refused.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r} in {path}")
        version = records.read_u32(fh, what="version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config = _config_from_text(records.read_bytes(fh, what="config").decode("utf-8"))
        if expect_config is not None and config != expect_config:
            raise CheckpointError(
                f"checkpoint config {config} does not match requested {expect_config}")
        model = build(config, seed=0)
        remaining = {p.name: p for p in model.parameters()}
        while remaining:
            name, arr = records.read_tensor_record(fh)
            p = remaining.pop(name, None)
            if p is None:
                raise CheckpointError(f"unknown or duplicate parameter {name!r} "
                                      f"in checkpoint {path}")
            if arr.shape != p.value.shape:
                raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, "
                                      f"expected {p.value.shape}")
            p.value[...] = arr
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"trailing bytes after last parameter in {path}")
    return model, config
