"""Synthetic two-class shapes dataset (filled disks vs filled squares).

Ships so CI and demos never need real cell imagery; a real folder of images
drops in with zero code change. Deterministic for a given seed.
"""

from __future__ import annotations

import random
from pathlib import Path

from PIL import Image, ImageDraw


def generate_shapes_dataset(root: str | Path, per_class: int = 32, size: int = 32,
                            seed: int = 0) -> Path:
    root = Path(root)
    rng = random.Random(seed)
    for class_name in ("disk", "square"):
        class_dir = root / class_name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            img = Image.new("RGB", (size, size), color=(rng.randint(0, 40),) * 3)
            draw = ImageDraw.Draw(img)
            half = rng.randint(size // 5, size // 3)
            cx = rng.randint(half + 1, size - half - 2)
            cy = rng.randint(half + 1, size - half - 2)
            shade = rng.randint(180, 255)
            color = (shade, shade, shade)
            box = (cx - half, cy - half, cx + half, cy + half)
            if class_name == "disk":
                draw.ellipse(box, fill=color)
            else:
                draw.rectangle(box, fill=color)
            img.save(class_dir / f"img_{i:03d}.png")
    return root


def main() -> None:
    import argparse

    parser = argparse.ArgumentParser(description="generate the synthetic shapes dataset")
    parser.add_argument("root")
    parser.add_argument("--per-class", type=int, default=32)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    generate_shapes_dataset(args.root, args.per_class, args.size, args.seed)
    print(f"wrote {2 * args.per_class} images under {args.root}")


if __name__ == "__main__":
    main()
