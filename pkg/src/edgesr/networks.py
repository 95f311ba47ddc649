"""Generators and PatchGAN discriminators for the edge and completion stages."""
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm as _torch_spectral_norm


@dataclass
class GeneratorSpec:
    in_channels: int
    out_channels: int
    base_width: int = 64
    n_residual_blocks: int = 8
    residual_dilation: int = 2
    downsample_steps: int = 2
    use_spectral_norm: bool = True


@dataclass
class DiscriminatorSpec:
    in_channels: int
    base_width: int = 64
    use_spectral_norm: bool = True


# (out_channels multiplier, stride) for each 4x4 conv of the 70x70 PatchGAN
PATCHGAN_LAYERS = ((1, 2), (2, 2), (4, 2), (8, 1))
PATCHGAN_KERNEL = 4


def spectral_norm(module):
    """Attach spectral normalization with one power iteration per training forward.

    The persistent u/v estimates are seeded from an exact SVD so the bound
    holds from the first step instead of after many iterations.
    """
    module = _torch_spectral_norm(module, n_power_iterations=1)
    sn = module.parametrizations.weight[0]
    with torch.no_grad():
        w = module.parametrizations.weight.original
        mat = w.reshape(w.shape[0], -1)
        u, _, vh = torch.linalg.svd(mat, full_matrices=False)
        sn._u.copy_(u[:, 0])
        sn._v.copy_(vh[0])
    return module


def _conv(in_ch, out_ch, kernel, stride=1, padding=0, dilation=1, sn=True):
    conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding, dilation=dilation)
    nn.init.normal_(conv.weight, 0.0, 0.02)
    nn.init.zeros_(conv.bias)
    return spectral_norm(conv) if sn else conv


def _norm(channels):
    return nn.InstanceNorm2d(channels, affine=True, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, channels, dilation=2, sn=True):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(dilation),
            _conv(channels, channels, 3, dilation=dilation, sn=sn),
            _norm(channels),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            _conv(channels, channels, 3, sn=sn),
            _norm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder (two stride-2 convs), dilated residual blocks, resize-conv decoder.

    Inputs passed to ``forward`` are concatenated along channels; the output
    goes through a sigmoid so it lives in [0, 1].
    """

    def __init__(self, spec):
        super().__init__()
        if spec.in_channels < 1 or spec.out_channels < 1 or spec.base_width < 1:
            raise ValueError(f"invalid generator spec: {spec}")
        self.spec = spec
        sn = spec.use_spectral_norm
        w = spec.base_width

        layers = [nn.ReflectionPad2d(3), _conv(spec.in_channels, w, 7, sn=sn), _norm(w), nn.ReLU(True)]
        ch = w
        for _ in range(spec.downsample_steps):
            layers += [_conv(ch, ch * 2, 4, stride=2, padding=1, sn=sn), _norm(ch * 2), nn.ReLU(True)]
            ch *= 2
        self.encoder = nn.Sequential(*layers)

        self.middle = nn.Sequential(
            *[ResidualBlock(ch, spec.residual_dilation, sn=sn) for _ in range(spec.n_residual_blocks)]
        )

        layers = []
        for _ in range(spec.downsample_steps):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.ReflectionPad2d(1),
                _conv(ch, ch // 2, 3, sn=sn),
                _norm(ch // 2),
                nn.ReLU(True),
            ]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), _conv(ch, spec.out_channels, 7, sn=sn)]
        self.decoder = nn.Sequential(*layers)

    @property
    def size_multiple(self):
        return 2 ** self.spec.downsample_steps

    def forward(self, *inputs):
        x = _concat_inputs(inputs, self.spec.in_channels)
        h, w = x.shape[-2:]
        m = self.size_multiple
        if h % m or w % m:
            raise ValueError(f"generator input size {h}x{w} must be divisible by {m}")
        x = self.decoder(self.middle(self.encoder(x)))
        return torch.sigmoid(x)


class Discriminator(nn.Module):
    """70x70 PatchGAN emitting a map of raw (unbounded) patch scores.

    ``forward`` returns ``(scores, features)`` where ``features`` are the
    activations of every layer before the score layer.
    """

    def __init__(self, spec):
        super().__init__()
        if spec.in_channels < 1 or spec.base_width < 1:
            raise ValueError(f"invalid discriminator spec: {spec}")
        self.spec = spec
        sn = spec.use_spectral_norm
        ch = spec.in_channels
        blocks = []
        for mult, stride in PATCHGAN_LAYERS:
            out = spec.base_width * mult
            blocks.append(nn.Sequential(
                _conv(ch, out, PATCHGAN_KERNEL, stride=stride, padding=1, sn=sn),
                nn.LeakyReLU(0.2, True),
            ))
            ch = out
        self.blocks = nn.ModuleList(blocks)
        self.score = _conv(ch, 1, PATCHGAN_KERNEL, stride=1, padding=1, sn=sn)

    def forward(self, *inputs):
        x = _concat_inputs(inputs, self.spec.in_channels)
        features = []
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return self.score(x), features


def _concat_inputs(inputs, expected_channels):
    sizes = {tuple(t.shape[-2:]) for t in inputs}
    if len(sizes) != 1:
        raise ValueError(f"inputs have mismatched spatial sizes: {sorted(sizes)}")
    x = torch.cat(inputs, dim=1) if len(inputs) > 1 else inputs[0]
    if x.shape[1] != expected_channels:
        raise ValueError(f"expected {expected_channels} input channels, got {x.shape[1]}")
    return x


def generator_width(state_dict):
    """Base width of a generator from its saved weights."""
    for key in ("encoder.1.parametrizations.weight.original", "encoder.1.weight"):
        if key in state_dict:
            return state_dict[key].shape[0]
    raise KeyError("state dict does not look like a generator")


def build_generator(spec):
    return Generator(spec)


def build_discriminator(spec):
    return Discriminator(spec)


def edge_generator(base_width=64, use_spectral_norm=True):
    """G1: (grayscale, LR edges), both upscaled to HR size -> soft HR edge map."""
    return Generator(GeneratorSpec(2, 1, base_width=base_width, use_spectral_norm=use_spectral_norm))


def image_generator(base_width=64, use_spectral_norm=True):
    """G2: (zero-inserted RGB, edge map) -> RGB HR image."""
    return Generator(GeneratorSpec(4, 3, base_width=base_width, use_spectral_norm=use_spectral_norm))


def edge_discriminator(base_width=64):
    """D1 judges an edge map conditioned on the grayscale image."""
    return Discriminator(DiscriminatorSpec(2, base_width=base_width))


def image_discriminator(base_width=64):
    """D2 judges an RGB image conditioned on the edge map."""
    return Discriminator(DiscriminatorSpec(4, base_width=base_width))


def patchgan_output_size(n):
    """Spatial size of the score map for an n-pixel input side."""
    for _, stride in PATCHGAN_LAYERS + ((None, 1),):
        n = (n + 2 - PATCHGAN_KERNEL) // stride + 1
    return n


def patchgan_receptive_field():
    rf, jump = 1, 1
    for _, stride in PATCHGAN_LAYERS + ((None, 1),):
        rf += (PATCHGAN_KERNEL - 1) * jump
        jump *= stride
    return rf


def offset_upsample_tensor(x, scale):
    """Zero-insertion upsampling of an (N, C, H, W) tensor as a fixed
    transposed convolution with a one-hot s x s kernel."""
    c = x.shape[1]
    kernel = x.new_zeros((c, 1, scale, scale))
    kernel[:, :, 0, 0] = 1.0
    return F.conv_transpose2d(x, kernel, stride=scale, groups=c)


def spectral_norms(module):
    """Largest singular value of every (reshaped) conv weight as used in forward."""
    out = {}
    for name, m in module.named_modules():
        if isinstance(m, nn.Conv2d):
            w = m.weight.detach()
            out[name] = torch.linalg.matrix_norm(w.reshape(w.shape[0], -1), ord=2).item()
    return out
