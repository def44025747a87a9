"""Desk-scale fixture assets: a tiny CNN and a synthetic separable dataset.

Each image carries one of ten 12x12 colored patch patterns stamped at a
random position on a noisy background; the patch identity is the label, so
correct saliency maps must localize the patch.
"""

from collections import OrderedDict

import numpy as np
import torch
from torch import nn

IMAGE_SIZE = 32
PATCH_SIZE = 12
NUM_CLASSES = 10
TARGET_LAYER = "conv2"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ToyConvNet(nn.Module):
    """Two conv blocks, 16 channels at the target layer, 10 classes."""

    def __init__(self):
        super().__init__()
        self.layers = nn.ModuleDict(OrderedDict([
            ("conv1", nn.Conv2d(3, 12, 3, padding=1)),
            ("bn1", nn.BatchNorm2d(12)),
            ("relu1", nn.ReLU()),
            ("pool1", nn.MaxPool2d(2)),
            ("conv2", nn.Conv2d(12, 16, 3, padding=1)),
            ("relu2", nn.ReLU()),
            ("pool2", nn.MaxPool2d(2)),
            ("gap", nn.AdaptiveAvgPool2d(1)),
            ("flatten", nn.Flatten()),
            ("fc", nn.Linear(16, NUM_CLASSES)),
        ]))

    def forward(self, x):
        for module in self.layers.values():
            x = module(x)
        return x

    def ordered_layers(self):
        return list(self.layers.items())


def _class_templates(rng):
    """Ten distinct binary patch shapes with distinct colors."""
    shapes = []
    for _ in range(NUM_CLASSES):
        mask = rng.random((PATCH_SIZE, PATCH_SIZE)) < 0.45
        # thicken so the shape survives downsampling
        mask = mask | np.roll(mask, 1, axis=0) | np.roll(mask, 1, axis=1)
        shapes.append(mask.astype(np.float32))
    hues = np.linspace(0.0, 1.0, NUM_CLASSES, endpoint=False)
    colors = np.stack([_hsv_to_rgb(h, 0.9, 1.0) for h in hues])
    return shapes, colors.astype(np.float32)


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def make_dataset(count, seed):
    """(images (N,32,32,3) in [0,1], labels (N,)) with stamped class patches."""
    rng = np.random.default_rng(seed)
    shapes, colors = _class_templates(np.random.default_rng(12345))
    images = np.empty((count, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    labels = rng.integers(0, NUM_CLASSES, size=count)
    margin = IMAGE_SIZE - PATCH_SIZE
    for n in range(count):
        img = 0.25 + 0.15 * rng.random((IMAGE_SIZE, IMAGE_SIZE, 3))
        cls = int(labels[n])
        r, c = rng.integers(0, margin + 1, size=2)
        patch = shapes[cls][:, :, None] * colors[cls][None, None, :]
        region = img[r:r + PATCH_SIZE, c:c + PATCH_SIZE]
        mask = shapes[cls][:, :, None]
        img[r:r + PATCH_SIZE, c:c + PATCH_SIZE] = (1 - mask) * region + mask * patch
        images[n] = np.clip(img, 0.0, 1.0)
    return images, labels.astype(np.int64)


def normalize_batch(images):
    """(N,H,W,3) pixels in [0,1] -> normalized (N,3,H,W) torch tensor."""
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    x = (images - mean) / std
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


def train_toy_model(seed=0, train_count=1500, test_count=300, epochs=6):
    """Train the fixture CNN; returns (model in eval mode, test accuracy)."""
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    model = ToyConvNet()
    train_x, train_y = make_dataset(train_count, seed=seed + 1)
    test_x, test_y = make_dataset(test_count, seed=seed + 2)
    xt = normalize_batch(train_x)
    yt = torch.from_numpy(train_y)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    loss_fn = nn.CrossEntropyLoss()
    batch = 64
    order_rng = np.random.default_rng(seed + 3)
    model.train()
    for _ in range(epochs):
        order = order_rng.permutation(train_count)
        for start in range(0, train_count, batch):
            idx = order[start:start + batch]
            opt.zero_grad()
            loss = loss_fn(model(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        pred = model(normalize_batch(test_x)).argmax(dim=1).numpy()
    accuracy = float((pred == test_y).mean())
    return model, accuracy
