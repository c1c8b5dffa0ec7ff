"""Folder-of-images dataset: one subfolder per class, deterministic split, augmentation.

Augmentation expands the training split: each image contributes its original
plus (per enabled toggle) a horizontal flip, a vertical flip, a random
rotation, and a noised copy.
"""

from __future__ import annotations

import random
from pathlib import Path

import torch
from PIL import Image

from .config import PluginConfig

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class DatasetError(Exception):
    pass


def _load_image(path: Path, size: int) -> torch.Tensor:
    with Image.open(path) as img:
        img = img.convert("RGB").resize((size, size), Image.BILINEAR)
        data = torch.frombuffer(bytearray(img.tobytes()), dtype=torch.uint8)
    return data.reshape(size, size, 3).permute(2, 0, 1).float() / 255.0


def _augment(image: torch.Tensor, cfg: PluginConfig, rng: random.Random) -> list[torch.Tensor]:
    out = [image]
    toggles = cfg.augmentations
    if toggles.get("hflip"):
        out.append(torch.flip(image, dims=(2,)))
    if toggles.get("vflip"):
        out.append(torch.flip(image, dims=(1,)))
    if toggles.get("rotation"):
        angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)
        out.append(_rotate(image, angle))
    if toggles.get("noise"):
        noise_rng = torch.Generator().manual_seed(rng.randrange(2**31))
        noise = torch.randn(image.shape, generator=noise_rng) * cfg.noise_sigma
        out.append((image + noise).clamp(0.0, 1.0))
    return out


def _rotate(image: torch.Tensor, degrees: float) -> torch.Tensor:
    """Nearest-neighbour rotation about the image centre (keeps the frame size)."""
    import math

    c, h, w = image.shape
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys = torch.arange(h).float() - (h - 1) / 2
    xs = torch.arange(w).float() - (w - 1) / 2
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    src_x = (cos_t * grid_x + sin_t * grid_y + (w - 1) / 2).round().long()
    src_y = (-sin_t * grid_x + cos_t * grid_y + (h - 1) / 2).round().long()
    valid = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    src_x = src_x.clamp(0, w - 1)
    src_y = src_y.clamp(0, h - 1)
    rotated = image[:, src_y, src_x]
    return torch.where(valid.unsqueeze(0), rotated, torch.zeros_like(rotated))


def load_split(cfg: PluginConfig) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns (train_x, train_y, val_x, val_y); split and augmentation are seed-deterministic."""
    root = Path(cfg.dataset_root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) < 2:
        raise DatasetError(f"{root} must hold at least 2 class subfolders")

    rng = random.Random(cfg.seed)
    train_x, train_y, val_x, val_y = [], [], [], []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if len(files) < 4:
            raise DatasetError(f"class {class_dir.name} has {len(files)} images, need >= 4")
        order = list(range(len(files)))
        rng.shuffle(order)
        n_val = max(1, round(len(files) * cfg.val_fraction))
        for position, index in enumerate(order):
            image = _load_image(files[index], cfg.image_size)
            if position < n_val:
                val_x.append(image)
                val_y.append(label)
            else:
                for augmented in _augment(image, cfg, rng):
                    train_x.append(augmented)
                    train_y.append(label)
    return (torch.stack(train_x), torch.tensor(train_y, dtype=torch.long),
            torch.stack(val_x), torch.tensor(val_y, dtype=torch.long))
