"""U-shape encoder/decoder network built from the layer primitives.

Encoder level L runs two conv3x3+BN+ReLU stages at base_filters*2**L
channels followed by 2x2 max-pooling; the bottleneck doubles channels once
more; each decoder level upsamples 2x (nearest + conv3x3+BN+ReLU), then
concatenates the matching encoder feature map and runs another two-conv
block. A final 1x1 convolution with no BN or activation maps to class
logits, so output height/width always equal the input's.

All convolutions use "same" zero padding. Parameters live in plain numpy
arrays addressed by stable dotted names; backward returns one gradient per
trainable parameter name.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .layers import (
    BNParams,
    ConvParams,
    batchnorm_backward,
    batchnorm_forward,
    bn_params,
    conv2d_backward,
    conv2d_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    upsample2x_backward,
    upsample2x_forward,
)
from .rng import Rng
from .tensor import Shape4, concat_channels, tensor_rand_normal


@dataclass
class UNetConfig:
    input_channels: int = 3
    num_classes: int = 11
    depth: int = 3
    base_filters: int = 16
    patch_size: int = 128

    def validate(self) -> "UNetConfig":
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.base_filters < 1:
            raise ConfigError("base_filters must be >= 1")
        scale = 1 << self.depth
        if self.patch_size < scale or self.patch_size % scale:
            raise ConfigError(
                f"patch_size {self.patch_size} must be a multiple of 2^depth = {scale}"
            )
        return self


@dataclass
class ConvBlock:
    conv1: ConvParams
    bn1: BNParams
    conv2: ConvParams
    bn2: BNParams


@dataclass
class UpBlock:
    conv: ConvParams
    bn: BNParams


@dataclass
class UNetModel:
    config: UNetConfig
    encoders: list
    bottleneck: ConvBlock
    ups: list
    decoders: list
    head: ConvParams

    def named_parameters(self):
        """(name, array) pairs for every trainable parameter, stable order."""
        out = []
        for i, blk in enumerate(self.encoders):
            out.extend(_block_params(f"enc{i}", blk))
        out.extend(_block_params("bottleneck", self.bottleneck))
        for i in reversed(range(len(self.decoders))):
            up = self.ups[i]
            out.append((f"dec{i}.up.weight", up.conv.weights))
            out.append((f"dec{i}.up.bias", up.conv.bias))
            out.append((f"dec{i}.upbn.gamma", up.bn.gamma))
            out.append((f"dec{i}.upbn.beta", up.bn.beta))
            out.extend(_block_params(f"dec{i}", self.decoders[i]))
        out.append(("head.weight", self.head.weights))
        out.append(("head.bias", self.head.bias))
        return out

    def named_state(self):
        """(name, array) pairs for BN running statistics."""
        out = []
        for i, blk in enumerate(self.encoders):
            out.extend(_block_state(f"enc{i}", blk))
        out.extend(_block_state("bottleneck", self.bottleneck))
        for i in reversed(range(len(self.decoders))):
            up = self.ups[i]
            out.append((f"dec{i}.upbn.running_mean", up.bn.running_mean))
            out.append((f"dec{i}.upbn.running_var", up.bn.running_var))
            out.extend(_block_state(f"dec{i}", self.decoders[i]))
        return out


def _block_params(prefix, blk: ConvBlock):
    return [
        (f"{prefix}.conv1.weight", blk.conv1.weights),
        (f"{prefix}.conv1.bias", blk.conv1.bias),
        (f"{prefix}.bn1.gamma", blk.bn1.gamma),
        (f"{prefix}.bn1.beta", blk.bn1.beta),
        (f"{prefix}.conv2.weight", blk.conv2.weights),
        (f"{prefix}.conv2.bias", blk.conv2.bias),
        (f"{prefix}.bn2.gamma", blk.bn2.gamma),
        (f"{prefix}.bn2.beta", blk.bn2.beta),
    ]


def _block_state(prefix, blk: ConvBlock):
    return [
        (f"{prefix}.bn1.running_mean", blk.bn1.running_mean),
        (f"{prefix}.bn1.running_var", blk.bn1.running_var),
        (f"{prefix}.bn2.running_mean", blk.bn2.running_mean),
        (f"{prefix}.bn2.running_var", blk.bn2.running_var),
    ]


def _he_conv(out_c: int, in_c: int, k: int, rng: Rng) -> ConvParams:
    std = float(np.sqrt(2.0 / (in_c * k * k)))
    w = tensor_rand_normal(Shape4(out_c, in_c, k, k), 0.0, std, rng)
    return ConvParams(weights=w, bias=np.zeros(out_c, dtype=np.float32))


def _he_block(in_c: int, out_c: int, rng: Rng) -> ConvBlock:
    return ConvBlock(
        conv1=_he_conv(out_c, in_c, 3, rng),
        bn1=bn_params(out_c),
        conv2=_he_conv(out_c, out_c, 3, rng),
        bn2=bn_params(out_c),
    )


def build(config: UNetConfig, rng: Rng) -> UNetModel:
    """Construct a model with He-normal conv weights, zero biases,
    BN gamma=1/beta=0. Weights are drawn in forward order, so a fixed
    seed yields a bit-identical model."""
    config.validate()
    filters = [config.base_filters << level for level in range(config.depth + 1)]
    encoders = []
    in_c = config.input_channels
    for level in range(config.depth):
        encoders.append(_he_block(in_c, filters[level], rng))
        in_c = filters[level]
    bottleneck = _he_block(in_c, filters[config.depth], rng)
    ups = []
    decoders = []
    for level in reversed(range(config.depth)):
        above = filters[level + 1]
        ups.append(UpBlock(conv=_he_conv(filters[level], above, 3, rng), bn=bn_params(filters[level])))
        decoders.append(_he_block(2 * filters[level], filters[level], rng))
    ups.reverse()
    decoders.reverse()
    head = _he_conv(config.num_classes, config.base_filters, 1, rng)
    model = UNetModel(config, encoders, bottleneck, ups, decoders, head)
    _check_channel_bookkeeping(model)
    return model


def _check_channel_bookkeeping(model: UNetModel):
    """Decoder concat inputs must equal skip channels + upsampled channels."""
    for level in range(model.config.depth):
        skip_c = model.encoders[level].conv2.weights.shape[0]
        up_c = model.ups[level].conv.weights.shape[0]
        dec_in = model.decoders[level].conv1.weights.shape[1]
        if dec_in != skip_c + up_c:
            raise ConfigError(
                f"decoder level {level} expects {dec_in} channels, "
                f"skip {skip_c} + up {up_c} provided"
            )


def _block_forward(blk: ConvBlock, x, training):
    h, c1 = conv2d_forward(x, blk.conv1, stride=1, pad=blk.conv1.weights.shape[2] // 2)
    h, b1 = batchnorm_forward(h, blk.bn1, training)
    h, r1 = relu_forward(h)
    h, c2 = conv2d_forward(h, blk.conv2, stride=1, pad=blk.conv2.weights.shape[2] // 2)
    h, b2 = batchnorm_forward(h, blk.bn2, training)
    h, r2 = relu_forward(h)
    return h, (c1, b1, r1, c2, b2, r2)


def _block_backward(prefix, grad, caches, grads: dict):
    c1, b1, r1, c2, b2, r2 = caches
    grad = relu_backward(grad, r2)
    grad, g_gamma, g_beta = batchnorm_backward(grad, b2)
    grads[f"{prefix}.bn2.gamma"] = g_gamma
    grads[f"{prefix}.bn2.beta"] = g_beta
    grad, g_w, g_b = conv2d_backward(grad, c2)
    grads[f"{prefix}.conv2.weight"] = g_w
    grads[f"{prefix}.conv2.bias"] = g_b
    grad = relu_backward(grad, r1)
    grad, g_gamma, g_beta = batchnorm_backward(grad, b1)
    grads[f"{prefix}.bn1.gamma"] = g_gamma
    grads[f"{prefix}.bn1.beta"] = g_beta
    grad, g_w, g_b = conv2d_backward(grad, c1)
    grads[f"{prefix}.conv1.weight"] = g_w
    grads[f"{prefix}.conv1.bias"] = g_b
    return grad


@dataclass
class UNetCaches:
    enc: list = field(default_factory=list)  # (block caches, pool cache) per level
    skip_channels: list = field(default_factory=list)
    bottleneck: tuple = None
    dec: list = field(default_factory=list)  # (up, upconv, upbn, uprelu, block) per level
    head: object = None


def forward(model: UNetModel, x: np.ndarray, training: bool):
    """Run the network; returns (logits, caches). Spatial size is preserved."""
    cfg = model.config
    if x.ndim != 4 or x.shape[1] != cfg.input_channels:
        raise ShapeError(f"input must be (n, {cfg.input_channels}, h, w), got {x.shape}")
    if x.shape[2] != cfg.patch_size or x.shape[3] != cfg.patch_size:
        raise ShapeError(
            f"input spatial dims {x.shape[2:]} != patch_size {cfg.patch_size}"
        )
    caches = UNetCaches()
    skips = []
    h = x
    for level in range(cfg.depth):
        h, blk_c = _block_forward(model.encoders[level], h, training)
        skips.append(h)
        caches.skip_channels.append(h.shape[1])
        h, pool_c = maxpool2d_forward(h, 2, 2)
        caches.enc.append((blk_c, pool_c))
    h, caches.bottleneck = _block_forward(model.bottleneck, h, training)
    for level in reversed(range(cfg.depth)):
        h, up_c = upsample2x_forward(h)
        h, uc_c = conv2d_forward(h, model.ups[level].conv, stride=1, pad=1)
        h, ub_c = batchnorm_forward(h, model.ups[level].bn, training)
        h, ur_c = relu_forward(h)
        h = concat_channels(skips[level], h)
        h, blk_c = _block_forward(model.decoders[level], h, training)
        caches.dec.append((up_c, uc_c, ub_c, ur_c, blk_c))
    logits, caches.head = conv2d_forward(h, model.head, stride=1, pad=0)
    return logits, caches


def backward(model: UNetModel, caches: UNetCaches, grad_logits: np.ndarray) -> dict:
    """Backpropagate through the cached forward pass; returns a gradient
    per trainable parameter name. Skip-connection gradients are split back
    to both branches at each concat."""
    cfg = model.config
    if caches.head is None or len(caches.dec) != cfg.depth:
        raise StateError("caches do not match a completed forward pass")
    grads: dict = {}
    grad, g_w, g_b = conv2d_backward(grad_logits, caches.head)
    grads["head.weight"] = g_w
    grads["head.bias"] = g_b

    skip_grads = [None] * cfg.depth
    # caches.dec was appended for level = depth-1 .. 0; unwind from level 0 up
    for level in range(cfg.depth):
        up_c, uc_c, ub_c, ur_c, blk_c = caches.dec[cfg.depth - 1 - level]
        grad = _block_backward(f"dec{level}", grad, blk_c, grads)
        split = caches.skip_channels[level]
        skip_grads[level] = grad[:, :split]
        grad = grad[:, split:]
        grad = relu_backward(grad, ur_c)
        grad, g_gamma, g_beta = batchnorm_backward(grad, ub_c)
        grads[f"dec{level}.upbn.gamma"] = g_gamma
        grads[f"dec{level}.upbn.beta"] = g_beta
        grad, g_w, g_b = conv2d_backward(grad, uc_c)
        grads[f"dec{level}.up.weight"] = g_w
        grads[f"dec{level}.up.bias"] = g_b
        grad = upsample2x_backward(grad, up_c)

    grad = _block_backward("bottleneck", grad, caches.bottleneck, grads)
    for level in reversed(range(cfg.depth)):
        blk_c, pool_c = caches.enc[level]
        grad = maxpool2d_backward(grad, pool_c)
        grad = grad + skip_grads[level]
        grad = _block_backward(f"enc{level}", grad, blk_c, grads)
    return grads


def parameter_count(model: UNetModel) -> int:
    """Number of trainable scalars (conv weights/biases, BN gamma/beta)."""
    return sum(p.size for _, p in model.named_parameters())


def clone(model: UNetModel) -> UNetModel:
    """Deep copy of parameters, state, and config."""
    cfg = UNetConfig(**vars(model.config))
    out = build(cfg, Rng(0))
    src = dict(model.named_parameters() + model.named_state())
    for name, arr in out.named_parameters() + out.named_state():
        arr[...] = src[name]
    return out
