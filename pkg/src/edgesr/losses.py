"""Training objectives and the frozen VGG-19 feature extractor they use."""
import os
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class LossWeights:
    lambda_g1: float = 1.0
    lambda_fm: float = 10.0
    lambda_l1: float = 1.0
    lambda_g2: float = 0.1
    lambda_p: float = 0.1
    lambda_s: float = 250.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def hinge_d(real_scores, fake_scores):
    _same_shape(real_scores, fake_scores, "hinge_d")
    return torch.relu(1.0 - real_scores).mean() + torch.relu(1.0 + fake_scores).mean()


def hinge_g(fake_scores):
    return -fake_scores.mean()


def l1_loss(pred, target):
    _same_shape(pred, target, "l1_loss")
    return (pred - target).abs().mean()


def feature_matching(real_acts, fake_acts):
    """Sum over layers of the mean absolute difference between activations."""
    if len(real_acts) != len(fake_acts):
        raise ValueError(f"feature_matching: {len(real_acts)} vs {len(fake_acts)} layers")
    total = 0.0
    for real, fake in zip(real_acts, fake_acts):
        _same_shape(real, fake, "feature_matching")
        total = total + (real - fake).abs().mean()
    return total


def gram_matrix(act):
    """Channel Gram matrix normalized by C*H*W. Accepts (C, H, W) or (N, C, H, W)."""
    squeeze = act.dim() == 3
    if squeeze:
        act = act.unsqueeze(0)
    n, c, h, w = act.shape
    f = act.reshape(n, c, h * w)
    g = f @ f.transpose(1, 2) / (c * h * w)
    return g[0] if squeeze else g


def perceptual_loss(gt, pred, extractor):
    """Sum over extractor layers of the mean absolute feature difference."""
    _same_shape(gt, pred, "perceptual_loss")
    return perceptual_from_features(_features(extractor, gt), extractor(pred))


def style_loss(gt, pred, extractor):
    """Sum over extractor layers of the mean absolute difference between Gram
    matrices."""
    _same_shape(gt, pred, "style_loss")
    return style_from_features(_features(extractor, gt), extractor(pred))


def perceptual_from_features(feats_gt, feats_pred):
    total = 0.0
    for fg, fp in zip(feats_gt, feats_pred):
        total = total + (fg - fp).abs().mean()
    return total


def style_from_features(feats_gt, feats_pred):
    total = 0.0
    for fg, fp in zip(feats_gt, feats_pred):
        diff = gram_matrix(fg) - gram_matrix(fp)
        total = total + diff.abs().mean()
    return total


def _features(extractor, x):
    if extractor is None:
        raise ConfigError("perceptual/style losses need a feature extractor")
    if x.requires_grad:
        return extractor(x)
    with torch.no_grad():
        return extractor(x)


def joint_g1(adv, fm, w=None):
    w = w or LossWeights()
    return w.lambda_g1 * adv + w.lambda_fm * fm


def joint_g2(l1, adv, perc, style, w=None):
    w = w or LossWeights()
    return w.lambda_l1 * l1 + w.lambda_g2 * adv + w.lambda_p * perc + w.lambda_s * style


class ConfigError(RuntimeError):
    pass


# VGG-19 convolution widths up to conv5_1; 'M' is a 2x2 max pool.
VGG19_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M", 512)
VGG19_TAPS = {"relu1_1": 1, "relu2_1": 6, "relu3_1": 11, "relu4_1": 20, "relu5_1": 29}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
EXTRACTOR_FORMAT = "edgesr-vgg19-features/1"


class VGG19Features(nn.Module):
    """VGG-19 trunk through relu5_1, returning the five relu*_1 activations.

    Layer indices match ``torchvision.models.vgg19().features`` so its weights
    load directly. ``width`` scales every channel count (1.0 is the real
    network). Inputs are RGB in [0, 1]; ImageNet normalization happens here.
    Parameters are frozen.
    """

    def __init__(self, width=1.0):
        super().__init__()
        self.width = width
        layers = []
        ch = 3
        for v in VGG19_CFG:
            if v == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                out = max(1, int(round(v * width)))
                layers += [nn.Conv2d(ch, out, 3, padding=1), nn.ReLU(inplace=False)]
                ch = out
        self.features = nn.Sequential(*layers)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # always frozen; batch-independent anyway, but keep eval semantics
        return super().train(False)

    def forward(self, x):
        x = (x - self.mean) / self.std
        taps = set(VGG19_TAPS.values())
        out = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in taps:
                out.append(x)
        return out


def save_extractor(path, extractor):
    tmp = f"{path}.tmp"
    torch.save({"format": EXTRACTOR_FORMAT, "width": extractor.width,
                "state_dict": extractor.features.state_dict()}, tmp)
    os.replace(tmp, path)


def random_extractor(width=1.0, seed=0):
    """VGG-19 trunk with frozen random (He-normal) weights."""
    gen = torch.Generator().manual_seed(seed)
    model = VGG19Features(width)
    with torch.no_grad():
        for m in model.features:
            if isinstance(m, nn.Conv2d):
                fan_in = m.weight[0].numel()
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                m.bias.zero_()
    return model


def load_extractor(path):
    """Load extractor weights from ``path``.

    Accepts files written by :func:`save_extractor` or a torchvision VGG-19
    state dict (``features.N.*`` keys).
    """
    if not path:
        raise ConfigError("no feature-extractor weight file configured (set extractor_path)")
    if not os.path.isfile(path):
        raise ConfigError(f"feature-extractor weight file not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(blob, dict) and blob.get("format") == EXTRACTOR_FORMAT:
        model = VGG19Features(blob["width"])
        model.features.load_state_dict(blob["state_dict"])
        return model
    n_layers = len(VGG19Features().features)
    state = {}
    for key, value in blob.items():
        if key.startswith("features."):
            idx, rest = key[len("features."):].split(".", 1)
            if int(idx) < n_layers:
                state[f"{idx}.{rest}"] = value
    if not state:
        raise ConfigError(f"{path} is not a recognised VGG-19 weight file")
    model = VGG19Features(1.0)
    model.features.load_state_dict(state)
    return model
