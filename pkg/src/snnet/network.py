"""Assembly of the eleven-stage inception CNN and its embedding twin.

The trunk is: one stem of three parallel temporal convolutions (depth
concatenated), five inception blocks, the two-step color convolution (1x1
then 4x1 valid, collapsing the four band rows), four more inception blocks,
and global max pooling over each example's valid width. The classifier head
adds dense(1024) + ReLU + dropout + dense(2) + softmax; the embedding network
is the same trunk without the head.
"""

import io
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, relu
from .layers import (
    ActivationMap,
    ConvSpec,
    InceptionBlock,
    conv_color,
    conv_temporal,
    dense,
    dropout,
    global_max_pool,
    inception_forward,
    relu_map,
    softmax,
)
from .optim import xavier_uniform

CHECKPOINT_MAGIC = b"SNNET1\n"
MIN_VALID_WIDTH = 8  # four stride-2 stages need >= 1 surviving column

# Group-relative positions (1-based) of the stride-2 inception blocks.
PRE_STRIDE_POSITIONS = (2, 5)
POST_STRIDE_POSITIONS = (2, 4)


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class InceptionConfig:
    """Channel counts of one inception block: direct 1x1 (b1), reduce+1x3
    (b3r, b3), reduce+1x5 (b5r, b5), and the post-pool 1x1 (pp)."""

    b1: int
    b3r: int
    b3: int
    b5r: int
    b5: int
    pp: int
    stride_w: int = 1

    def __post_init__(self):
        if min(self.b1, self.b3r, self.b3, self.b5r, self.b5, self.pp) <= 0:
            raise ValueError("all branch channel counts must be positive")
        if self.stride_w not in (1, 2):
            raise ValueError("stride must be 1 or 2")

    @property
    def out_channels(self):
        return self.b1 + self.b3 + self.b5 + self.pp


def inception_config(out_channels: int, stride_w: int = 1) -> InceptionConfig:
    """Default branch split: half the channels to the 1x3 branch, a quarter
    to the 1x1, an eighth each to 1x5 and the pool projection."""
    if out_channels % 8 != 0:
        raise ValueError("out_channels must be a multiple of 8")
    b1 = out_channels // 4
    b3 = out_channels // 2
    b5 = out_channels // 8
    pp = out_channels - b1 - b3 - b5
    return InceptionConfig(
        b1=b1,
        b3r=max(out_channels // 8, 8),
        b3=b3,
        b5r=max(out_channels // 16, 4),
        b5=b5,
        pp=pp,
        stride_w=stride_w,
    )


@dataclass(frozen=True)
class NetworkConfig:
    """Declarative description of the full architecture."""

    stem_channels: int = 16
    stem_kernels: tuple = (1, 3, 5)
    pre: tuple = ()
    color_channels: int = 128
    post: tuple = ()
    head_units: int = 1024
    classes: int = 2

    def __post_init__(self):
        if self.stem_channels <= 0 or self.color_channels <= 0:
            raise ValueError("channel counts must be positive")
        if self.head_units <= 0 or self.classes < 2:
            raise ValueError("invalid head configuration")
        if len(self.stem_kernels) == 0 or any(k % 2 != 1 for k in self.stem_kernels):
            raise ValueError("stem kernels must be odd widths")
        for group, name, want in ((self.pre, "pre", 2), (self.post, "post", 2)):
            if not group:
                raise ValueError(f"{name} block list must not be empty")
            strided = sum(1 for blk in group if blk.stride_w == 2)
            if strided != want:
                raise ValueError(
                    f"exactly {want} {name} blocks must have stride 2, got {strided}"
                )

    @property
    def embedding_dim(self):
        return self.post[-1].out_channels

    @property
    def stage_count(self):
        """Parameterized stages before the head: stem + inceptions + color."""
        return 1 + len(self.pre) + 1 + len(self.post)


def plan_network(
    stem_channels: int = 16,
    pre_channels=(64, 64, 96, 96, 128),
    color_channels: int = 128,
    post_channels=(160, 192, 224, 256),
    head_units: int = 1024,
) -> NetworkConfig:
    """Build a NetworkConfig from per-block output channel counts, placing
    the stride-2 blocks at the fixed group positions."""
    pre = tuple(
        inception_config(c, 2 if i + 1 in PRE_STRIDE_POSITIONS else 1)
        for i, c in enumerate(pre_channels)
    )
    post = tuple(
        inception_config(c, 2 if i + 1 in POST_STRIDE_POSITIONS else 1)
        for i, c in enumerate(post_channels)
    )
    return NetworkConfig(
        stem_channels=stem_channels,
        pre=pre,
        color_channels=color_channels,
        post=post,
        head_units=head_units,
    )


def default_network_config() -> NetworkConfig:
    return plan_network()


def width_trace(config: NetworkConfig, width: int):
    """Widths after each of the parameterized stages for an input of `width`."""
    trace = [width]
    w = width  # stem is stride 1
    trace.append(w)
    for blk in config.pre:
        w = -(-w // blk.stride_w)
        trace.append(w)
    trace.append(w)  # color convolution preserves width
    for blk in config.post:
        w = -(-w // blk.stride_w)
        trace.append(w)
    return trace


# --- configuration document (flat key = value text) ---


def config_to_text(config: NetworkConfig) -> str:
    lines = ["format = snnet-config-1"]
    lines.append("stem.kernels = " + ",".join(str(k) for k in config.stem_kernels))
    lines.append(f"stem.channels = {config.stem_channels}")
    for group, blocks in (("pre", config.pre), ("post", config.post)):
        lines.append(f"{group}.count = {len(blocks)}")
        for i, blk in enumerate(blocks):
            lines.append(
                f"{group}.{i} = b1={blk.b1},b3r={blk.b3r},b3={blk.b3},"
                f"b5r={blk.b5r},b5={blk.b5},pp={blk.pp},stride={blk.stride_w}"
            )
    lines.append(f"color.channels = {config.color_channels}")
    lines.append(f"head.units = {config.head_units}")
    lines.append(f"head.classes = {config.classes}")
    return "\n".join(lines) + "\n"


def _parse_block(text: str) -> InceptionConfig:
    fields = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        fields[key.strip()] = int(value)
    return InceptionConfig(
        b1=fields["b1"],
        b3r=fields["b3r"],
        b3=fields["b3"],
        b5r=fields["b5r"],
        b5=fields["b5"],
        pp=fields["pp"],
        stride_w=fields["stride"],
    )


def config_from_text(text: str) -> NetworkConfig:
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed config line {lineno}: {raw!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    if kv.get("format") != "snnet-config-1":
        raise CheckpointError(f"unsupported config format {kv.get('format')!r}")
    try:
        pre = tuple(_parse_block(kv[f"pre.{i}"]) for i in range(int(kv["pre.count"])))
        post = tuple(_parse_block(kv[f"post.{i}"]) for i in range(int(kv["post.count"])))
        return NetworkConfig(
            stem_channels=int(kv["stem.channels"]),
            stem_kernels=tuple(int(k) for k in kv["stem.kernels"].split(",")),
            pre=pre,
            color_channels=int(kv["color.channels"]),
            post=post,
            head_units=int(kv["head.units"]),
            classes=int(kv["head.classes"]),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"invalid config document: {exc}") from exc


# --- parameter declaration ---


def _conv_shapes(in_c, out_c, kh, kw):
    return (out_c, in_c, kh, kw), (out_c,)


def parameter_declaration(config: NetworkConfig):
    """Ordered (name, shape) pairs for every parameter tensor."""
    decl = []

    def add_conv(prefix, in_c, out_c, kh, kw):
        w_shape, b_shape = _conv_shapes(in_c, out_c, kh, kw)
        decl.append((prefix + ".weight", w_shape))
        decl.append((prefix + ".bias", b_shape))

    for k in config.stem_kernels:
        add_conv(f"stem.k{k}", 1, config.stem_channels, 1, k)
    in_c = config.stem_channels * len(config.stem_kernels)
    for group, blocks in (("pre", config.pre), ("post", config.post)):
        if group == "post":
            in_c = config.color_channels
        for i, blk in enumerate(blocks):
            add_conv(f"{group}.{i}.b1", in_c, blk.b1, 1, 1)
            add_conv(f"{group}.{i}.b3r", in_c, blk.b3r, 1, 1)
            add_conv(f"{group}.{i}.b3", blk.b3r, blk.b3, 1, 3)
            add_conv(f"{group}.{i}.b5r", in_c, blk.b5r, 1, 1)
            add_conv(f"{group}.{i}.b5", blk.b5r, blk.b5, 1, 5)
            add_conv(f"{group}.{i}.pp", in_c, blk.pp, 1, 1)
            in_c = blk.out_channels
        if group == "pre":
            add_conv("color.reduce", in_c, config.color_channels, 1, 1)
            add_conv("color.merge", config.color_channels, config.color_channels, 4, 1)
    decl.append(("head.fc1.weight", (config.embedding_dim, config.head_units)))
    decl.append(("head.fc1.bias", (config.head_units,)))
    decl.append(("head.fc2.weight", (config.head_units, config.classes)))
    decl.append(("head.fc2.bias", (config.classes,)))
    return decl


def parameter_count(config: NetworkConfig) -> int:
    """Total scalar parameters; a pure function of the configuration."""
    return sum(int(np.prod(shape)) for _, shape in parameter_declaration(config))


class Network:
    """A built network: configuration plus named parameter tensors."""

    def __init__(self, config: NetworkConfig, params: dict):
        self.config = config
        self.params = params
        self._wire()

    @classmethod
    def build(cls, config: NetworkConfig, rng=None):
        """Instantiate parameters in declaration order. With an rng, weights
        are Xavier-uniform and biases zero; without, everything is zero."""
        params = {}
        for name, shape in parameter_declaration(config):
            if name.endswith(".bias") or rng is None:
                params[name] = Tensor(np.zeros(shape), requires_grad=True)
            elif name.startswith("head."):
                fan_in, fan_out = shape[0], shape[1]
                params[name] = xavier_uniform(fan_in, fan_out, shape, rng)
            else:
                out_c, in_c, kh, kw = shape
                area = kh * kw
                params[name] = xavier_uniform(in_c * area, out_c * area, shape, rng)
        return cls(config, params)

    def _conv_spec(self, prefix, stride_w=1):
        return ConvSpec(
            weights=self.params[prefix + ".weight"],
            bias=self.params[prefix + ".bias"],
            stride_w=stride_w,
        )

    def _wire(self):
        cfg = self.config
        self.stem = [self._conv_spec(f"stem.k{k}") for k in cfg.stem_kernels]
        self.pre_blocks = [
            self._block(f"pre.{i}", blk) for i, blk in enumerate(cfg.pre)
        ]
        self.color_reduce = self._conv_spec("color.reduce")
        self.color_merge = self._conv_spec("color.merge")
        self.post_blocks = [
            self._block(f"post.{i}", blk) for i, blk in enumerate(cfg.post)
        ]

    def _block(self, prefix, blk: InceptionConfig) -> InceptionBlock:
        return InceptionBlock(
            b1=self._conv_spec(f"{prefix}.b1", blk.stride_w),
            b3_reduce=self._conv_spec(f"{prefix}.b3r"),
            b3=self._conv_spec(f"{prefix}.b3", blk.stride_w),
            b5_reduce=self._conv_spec(f"{prefix}.b5r"),
            b5=self._conv_spec(f"{prefix}.b5", blk.stride_w),
            pool_proj=self._conv_spec(f"{prefix}.pp"),
            stride_w=blk.stride_w,
        )

    # --- parameter access ---

    def parameters(self):
        return [self.params[name] for name, _ in parameter_declaration(self.config)]

    def named_parameters(self):
        return [(name, self.params[name]) for name, _ in parameter_declaration(self.config)]

    def trunk_parameters(self):
        return [
            self.params[name]
            for name, _ in parameter_declaration(self.config)
            if not name.startswith("head.")
        ]

    def head_parameters(self):
        return [
            self.params[name]
            for name, _ in parameter_declaration(self.config)
            if name.startswith("head.")
        ]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    # --- forward passes ---

    def forward_features(self, batch) -> Tensor:
        """Trunk forward: returns the global-max-pooled [B, embedding_dim]."""
        x = batch if isinstance(batch, ActivationMap) else assemble_batch(batch)
        stems = [relu_map(conv_temporal(x, spec)) for spec in self.stem]
        x = ActivationMap(concat([s.tensor for s in stems], axis=1), stems[0].valid_w)
        for blk in self.pre_blocks:
            x = inception_forward(x, blk)
        x = relu_map(conv_temporal(x, self.color_reduce))
        x = relu_map(conv_color(x, self.color_merge))
        for blk in self.post_blocks:
            x = inception_forward(x, blk)
        return global_max_pool(x)

    def classify_embeddings(self, emb: Tensor, training=False, dropout_rate=0.4, rng=None) -> Tensor:
        h = relu(dense(emb, self.params["head.fc1.weight"], self.params["head.fc1.bias"]))
        h = dropout(h, dropout_rate, training, rng)
        logits = dense(h, self.params["head.fc2.weight"], self.params["head.fc2.bias"])
        return softmax(logits)

    def forward_classifier(self, batch, training=False, dropout_rate=0.4, rng=None) -> Tensor:
        emb = self.forward_features(batch)
        return self.classify_embeddings(emb, training=training, dropout_rate=dropout_rate, rng=rng)

    def forward_embedding(self, batch) -> Tensor:
        return self.forward_features(batch)


def build_network(config: NetworkConfig, rng) -> Network:
    return Network.build(config, rng)


def assemble_batch(samples) -> ActivationMap:
    """Zero-pad encoded samples to a common width: [B, 1, 4, Wmax]."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty batch")
    widths = []
    for s in samples:
        if s.matrix.shape[0] != 4:
            raise ValueError("encoded samples must have 4 band rows")
        if s.valid_w < MIN_VALID_WIDTH:
            raise ValueError(
                f"sample width {s.valid_w} below the minimum of {MIN_VALID_WIDTH}"
            )
        if s.valid_w > s.matrix.shape[1]:
            raise ValueError("valid width exceeds matrix width")
        widths.append(s.matrix.shape[1])
    w_max = max(widths)
    data = np.zeros((len(samples), 1, 4, w_max))
    valid = np.zeros(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        data[i, 0, :, : s.matrix.shape[1]] = s.matrix
        valid[i] = s.valid_w
    return ActivationMap(Tensor(data), valid)


# --- checkpoint persistence ---


def save_checkpoint(net: Network, path):
    """Binary layout: magic, u32 config length, config text, then per
    parameter (declaration order): u32 name length, name, u32 rank, u32 dims,
    raw little-endian float64 values."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    doc = config_to_text(net.config).encode("utf-8")
    buf.write(struct.pack("<I", len(doc)))
    buf.write(doc)
    for name, tensor in net.named_parameters():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", tensor.data.ndim))
        for d in tensor.data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path, expected_config: NetworkConfig | None = None) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("not a snnet checkpoint (bad magic / version)")
        (doc_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config = config_from_text(_read_exact(fh, doc_len, "config").decode("utf-8"))
        if expected_config is not None and config != expected_config:
            raise CheckpointError("checkpoint configuration does not match expected")
        net = Network.build(config, rng=None)
        for name, shape in parameter_declaration(config):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            stored = _read_exact(fh, name_len, "name").decode("utf-8")
            if stored != name:
                raise CheckpointError(f"parameter order mismatch: {stored!r} vs {name!r}")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(
                "<" + "I" * rank, _read_exact(fh, 4 * rank, "dims")
            )
            if dims != tuple(shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: stored {dims}, config {tuple(shape)}"
                )
            count = int(np.prod(dims))
            raw = _read_exact(fh, 8 * count, f"values of {name}")
            net.params[name].data = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after last parameter")
    return net
