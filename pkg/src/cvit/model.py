"""The convolutional vision transformer: a VGG-style feature stack feeding a ViT encoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np

from . import nn
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, add, broadcast_to, concat, reshape, transpose


@dataclass(frozen=True)
class FLConfig:
    stage_channels: Tuple[int, ...] = (32, 64, 128, 256, 512)
    convs_per_stage: Tuple[int, ...] = (3, 3, 3, 4, 4)
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stage_channels) != len(self.convs_per_stage):
            raise ConfigurationError("stage_channels and convs_per_stage differ in length")
        if min(self.stage_channels) < 1 or min(self.convs_per_stage) < 1:
            raise ConfigurationError("stage widths and depths must be positive")

    @property
    def num_convs(self) -> int:
        return sum(self.convs_per_stage)

    @property
    def downsample(self) -> int:
        return 2 ** len(self.stage_channels)


@dataclass(frozen=True)
class ViTConfig:
    embed_dim: int = 1024
    heads: int = 8
    encoder_depth: int = 3
    mlp_hidden: int = 2048
    head_hidden: int = 2048
    num_classes: int = 2

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigurationError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        if self.encoder_depth < 0:
            raise ConfigurationError("encoder_depth must be non-negative")
        if self.num_classes != 2:
            raise ConfigurationError("the classifier head is binary")


@dataclass(frozen=True)
class CViTConfig:
    fl: FLConfig = field(default_factory=FLConfig)
    vit: ViTConfig = field(default_factory=ViTConfig)
    image_size: int = 224

    def __post_init__(self):
        if self.image_size < self.fl.downsample or self.image_size % self.fl.downsample:
            raise ConfigurationError(
                f"image_size {self.image_size} must be a positive multiple of {self.fl.downsample}")

    @property
    def feature_size(self) -> int:
        return self.image_size // self.fl.downsample

    @property
    def num_patches(self) -> int:
        # one patch per feature-map row
        return self.feature_size

    @property
    def patch_dim(self) -> int:
        return self.fl.stage_channels[-1] * self.feature_size

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    def to_dict(self) -> dict:
        return {"fl": asdict(self.fl), "vit": asdict(self.vit), "image_size": self.image_size}

    @classmethod
    def from_dict(cls, d: dict) -> "CViTConfig":
        fl = dict(d["fl"])
        fl = FLConfig(stage_channels=tuple(fl["stage_channels"]),
                      convs_per_stage=tuple(fl["convs_per_stage"]),
                      in_channels=int(fl.get("in_channels", 3)))
        return cls(fl=fl, vit=ViTConfig(**d["vit"]), image_size=int(d["image_size"]))

    @classmethod
    def reduced(cls, image_size: int = 32, stage_channels=(8, 16, 32, 64, 128), embed_dim: int = 64,
                heads: int = 8, encoder_depth: int = 3, mlp_hidden: int = 128,
                head_hidden: int = 128) -> "CViTConfig":
        """Same topology with small widths and extents, for desk-scale runs."""
        return cls(fl=FLConfig(stage_channels=tuple(stage_channels)),
                   vit=ViTConfig(embed_dim=embed_dim, heads=heads, encoder_depth=encoder_depth,
                                 mlp_hidden=mlp_hidden, head_hidden=head_hidden),
                   image_size=image_size)


def _param_shapes(config: CViTConfig) -> Dict[str, tuple]:
    shapes: Dict[str, tuple] = {}
    c_in = config.fl.in_channels
    layer = 0
    for c_out, reps in zip(config.fl.stage_channels, config.fl.convs_per_stage):
        for _ in range(reps):
            shapes[f"fl.{layer}.conv.weight"] = (c_out, c_in, 3, 3)
            shapes[f"fl.{layer}.conv.bias"] = (c_out,)
            shapes[f"fl.{layer}.bn.gamma"] = (c_out,)
            shapes[f"fl.{layer}.bn.beta"] = (c_out,)
            c_in = c_out
            layer += 1
    v = config.vit
    d = v.embed_dim
    shapes["vit.patch.weight"] = (config.patch_dim, d)
    shapes["vit.patch.bias"] = (d,)
    shapes["vit.cls_token"] = (1, d)
    shapes["vit.pos_embed"] = (config.seq_len, d)
    for i in range(v.encoder_depth):
        p = f"vit.enc.{i}"
        shapes[f"{p}.ln1.gamma"] = (d,)
        shapes[f"{p}.ln1.beta"] = (d,)
        for name in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.w{name}"] = (d, d)
            shapes[f"{p}.attn.b{name}"] = (d,)
        shapes[f"{p}.ln2.gamma"] = (d,)
        shapes[f"{p}.ln2.beta"] = (d,)
        shapes[f"{p}.mlp.w1"] = (d, v.mlp_hidden)
        shapes[f"{p}.mlp.b1"] = (v.mlp_hidden,)
        shapes[f"{p}.mlp.w2"] = (v.mlp_hidden, d)
        shapes[f"{p}.mlp.b2"] = (d,)
    shapes["head.norm.gamma"] = (d,)
    shapes["head.norm.beta"] = (d,)
    shapes["head.w1"] = (d, v.head_hidden)
    shapes["head.b1"] = (v.head_hidden,)
    shapes["head.w2"] = (v.head_hidden, v.num_classes)
    shapes["head.b2"] = (v.num_classes,)
    return shapes


class CViTModel:
    """Named parameter tensors plus batchnorm running statistics.

    ``training`` toggles batch statistics in the feature stack; nothing else
    in the network depends on the mode.
    """

    def __init__(self, config: CViTConfig, params: Dict[str, Tensor],
                 bn_states: Dict[str, nn.BatchNormState]):
        self.config = config
        self.params = params
        self.bn_states = bn_states
        self.training = True

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def train(self) -> "CViTModel":
        self.training = True
        return self

    def eval(self) -> "CViTModel":
        self.training = False
        return self

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Every tensor needed to reproduce the forward pass, keyed by name."""
        state = {name: t.data for name, t in self.params.items()}
        for name, st in self.bn_states.items():
            state[f"{name}.running_mean"] = st.running_mean
            state[f"{name}.running_var"] = st.running_var
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}")
        for name, arr in state.items():
            if tuple(arr.shape) != tuple(expected[name].shape):
                raise DimensionError(
                    f"shape mismatch for {name!r}: stored {tuple(arr.shape)} vs model {expected[name].shape}")
        for name, t in self.params.items():
            t.data = np.array(state[name], dtype=t.dtype)
        for name, st in self.bn_states.items():
            st.running_mean = np.array(state[f"{name}.running_mean"], dtype=st.running_mean.dtype)
            st.running_var = np.array(state[f"{name}.running_var"], dtype=st.running_var.dtype)

    def __call__(self, x) -> Tensor:
        return cvit_forward(self, x)


def init_parameters(config: CViTConfig, seed: int = 0, dtype=np.float32) -> CViTModel:
    """Deterministic initialisation from ``seed``.

    Conv kernels draw from N(0, 2/fan_in) since ReLU follows them; linear
    weights from N(0, 1/fan_in). Biases start at 0, norm scales at 1 and
    the class token and position embedding at N(0, 0.02^2).
    """
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith("conv.weight"):
            fan_in = int(np.prod(shape[1:]))
            arr = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(("gamma",)):
            arr = np.ones(shape)
        elif name.endswith(("cls_token", "pos_embed")):
            arr = rng.normal(0.0, 0.02, size=shape)
        elif len(shape) == 2:
            arr = rng.normal(0.0, math.sqrt(1.0 / shape[0]), size=shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    bn_states = {}
    for layer in range(config.fl.num_convs):
        c = params[f"fl.{layer}.bn.gamma"].shape[0]
        bn_states[f"fl.{layer}.bn"] = nn.BatchNormState(c, dtype=dtype)
    return CViTModel(config, params, bn_states)


def _as_input(model: CViTModel, x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=model.dtype))


def fl_forward(model: CViTModel, x) -> Tensor:
    """Feature stack: per stage (conv -> batchnorm -> ReLU) x k, then 2x2 max-pool."""
    x = _as_input(model, x)
    cfg = model.config
    s = cfg.image_size
    if x.ndim != 4 or x.shape[1:] != (cfg.fl.in_channels, s, s):
        raise DimensionError(f"expected input (N, {cfg.fl.in_channels}, {s}, {s}), got {x.shape}")
    p = model.params
    layer = 0
    for reps in cfg.fl.convs_per_stage:
        for _ in range(reps):
            key = f"fl.{layer}"
            x = nn.conv2d(x, p[f"{key}.conv.weight"], p[f"{key}.conv.bias"])
            x = nn.batchnorm2d(x, p[f"{key}.bn.gamma"], p[f"{key}.bn.beta"],
                               model.bn_states[f"{key}.bn"], training=model.training)
            x = nn.relu(x)
            layer += 1
        x = nn.maxpool2d(x)
    return x


def patchify_and_embed(features: Tensor, model: CViTModel) -> Tensor:
    """Cut the feature map into one patch per row, project, prepend class token, add positions.

    (N, C, P, W) -> (N, P + 1, D); patch ``i`` is ``features[:, :, i, :]``
    flattened channel-major.
    """
    cfg = model.config
    n = features.shape[0]
    c = cfg.fl.stage_channels[-1]
    expect = (c, cfg.num_patches, cfg.feature_size)
    if features.ndim != 4 or features.shape[1:] != expect:
        raise DimensionError(f"features must be (N, {c}, {cfg.num_patches}, {cfg.feature_size}), "
                             f"got {features.shape}")
    p = model.params
    tokens = reshape(transpose(features, (0, 2, 1, 3)), (n, cfg.num_patches, cfg.patch_dim))
    tokens = nn.linear(tokens, p["vit.patch.weight"], p["vit.patch.bias"])
    cls = broadcast_to(reshape(p["vit.cls_token"], (1, 1, cfg.vit.embed_dim)), (n, 1, cfg.vit.embed_dim))
    seq = concat([cls, tokens], axis=1)
    return add(seq, p["vit.pos_embed"])


def encoder_block(x: Tensor, model: CViTModel, index: int) -> Tensor:
    """Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x))."""
    p = model.params
    k = f"vit.enc.{index}"
    attn = {name: p[f"{k}.attn.{name}"] for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
    h = nn.layernorm(x, p[f"{k}.ln1.gamma"], p[f"{k}.ln1.beta"])
    x = add(x, nn.multi_head_self_attention(h, attn, heads=model.config.vit.heads))
    h = nn.layernorm(x, p[f"{k}.ln2.gamma"], p[f"{k}.ln2.beta"])
    h = nn.linear(nn.gelu(nn.linear(h, p[f"{k}.mlp.w1"], p[f"{k}.mlp.b1"])), p[f"{k}.mlp.w2"], p[f"{k}.mlp.b2"])
    return add(x, h)


def cvit_forward(model: CViTModel, x) -> Tensor:
    """Full network, (N, 3, S, S) -> (N, 2) raw logits."""
    seq = patchify_and_embed(fl_forward(model, x), model)
    for i in range(model.config.vit.encoder_depth):
        seq = encoder_block(seq, model, i)
    p = model.params
    cls = nn.layernorm(seq[:, 0, :], p["head.norm.gamma"], p["head.norm.beta"])
    h = nn.relu(nn.linear(cls, p["head.w1"], p["head.b1"]))
    return nn.linear(h, p["head.w2"], p["head.b2"])


def predict_proba(model: CViTModel, x, batch_size: int = 32) -> np.ndarray:
    """Fake-class probability for each image, evaluated in chunks."""
    x = np.asarray(x)
    out = []
    for start in range(0, len(x), batch_size):
        logits = cvit_forward(model, x[start:start + batch_size]).data.astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        out.append(e[:, 1] / e.sum(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def count_parameters(model_or_config) -> Dict[str, int]:
    """Trainable scalar counts by component.

    ``fl`` and ``vit`` are the two top-level components (the ViT side
    includes the classifier head); the finer keys break ``vit`` down and
    sum to it.
    """
    config = model_or_config.config if isinstance(model_or_config, CViTModel) else model_or_config
    groups = {"fl": 0, "patch_embedding": 0, "tokens": 0, "encoder": 0, "head": 0}
    for name, shape in _param_shapes(config).items():
        n = int(np.prod(shape))
        if name.startswith("fl."):
            groups["fl"] += n
        elif name.startswith("vit.patch"):
            groups["patch_embedding"] += n
        elif name in ("vit.cls_token", "vit.pos_embed"):
            groups["tokens"] += n
        elif name.startswith("vit.enc"):
            groups["encoder"] += n
        else:
            groups["head"] += n
    groups["vit"] = groups["patch_embedding"] + groups["tokens"] + groups["encoder"] + groups["head"]
    groups["total"] = groups["fl"] + groups["vit"]
    return groups
