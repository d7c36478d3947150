"""Dataset layout, image pair loading, and synchronized augmentation.

Layout is ``<root>/{RGB,T,GT}`` with triples matched by file stem. Thermal
images are read as single-channel and replicated to three channels so the
shared encoder sees equal channel counts. Ground truth is binarized at 127.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


class DatasetError(ValueError):
    """Raised when the dataset layout is unusable."""


@dataclass
class ImagePair:
    rgb: torch.Tensor      # (B, 3, H, W) in [0, 1]
    thermal: torch.Tensor  # (B, 3, H, W) in [0, 1]
    name: str = ""


@dataclass
class DatasetIndex:
    root: Path
    triples: list[tuple[str, Path, Path, Path]]
    missing: list[str] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def stems(self) -> list[str]:
        return [t[0] for t in self.triples]


def _scan(directory: Path) -> dict[str, Path]:
    files = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in _IMAGE_EXTS:
            files[path.stem] = path
    return files


def load_dataset(root: str | Path, split: str = "train") -> DatasetIndex:
    """Index stem-matched (rgb, thermal, gt) triples in lexicographic order."""
    root = Path(root)
    subdirs = {}
    for name in ("RGB", "T", "GT"):
        sub = root / name
        if not sub.is_dir():
            raise DatasetError(f"dataset root {root} is missing the {name}/ subdirectory")
        subdirs[name] = _scan(sub)

    stems = sorted(set(subdirs["RGB"]) | set(subdirs["T"]) | set(subdirs["GT"]))
    triples = []
    missing = []
    for stem in stems:
        absent = [name for name in ("RGB", "T", "GT") if stem not in subdirs[name]]
        if absent:
            missing.append(f"{stem}: missing in {', '.join(absent)}")
        else:
            triples.append((stem, subdirs["RGB"][stem], subdirs["T"][stem],
                            subdirs["GT"][stem]))
    if not triples:
        raise DatasetError(f"no complete rgb/thermal/gt triples under {root}")
    return DatasetIndex(root=root, triples=triples, missing=missing, split=split)


def _to_tensor(img: Image.Image) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.copy())


def load_rgb(path: Path, size: int | None = None) -> torch.Tensor:
    with Image.open(path) as img:
        img = img.convert("RGB")
        if size is not None:
            img = img.resize((size, size), Image.BILINEAR)
        return _to_tensor(img)


def load_thermal(path: Path, size: int | None = None) -> torch.Tensor:
    with Image.open(path) as img:
        img = img.convert("L")
        if size is not None:
            img = img.resize((size, size), Image.BILINEAR)
        return _to_tensor(img).repeat(3, 1, 1)


def load_gt(path: Path, size: int | None = None) -> torch.Tensor:
    with Image.open(path) as img:
        img = img.convert("L")
        if size is not None:
            img = img.resize((size, size), Image.NEAREST)
        arr = np.asarray(img)
    return torch.from_numpy((arr > 127).astype(np.float32))[None]


def load_triple(entry: tuple[str, Path, Path, Path],
                size: int) -> tuple[ImagePair, torch.Tensor]:
    stem, rgb_path, t_path, gt_path = entry
    pair = ImagePair(rgb=load_rgb(rgb_path, size)[None],
                     thermal=load_thermal(t_path, size)[None],
                     name=stem)
    return pair, load_gt(gt_path, size)[None]


# ---- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    flip: bool
    angle_deg: float
    crop: tuple[float, float, float, float]  # top, bottom, left, right fractions


def draw_augment_params(rng: random.Random, max_angle: float = 10.0,
                        max_crop: float = 0.10) -> AugmentParams:
    return AugmentParams(
        flip=rng.random() < 0.5,
        angle_deg=rng.uniform(-max_angle, max_angle),
        crop=tuple(rng.uniform(0.0, max_crop) for _ in range(4)),
    )


def apply_geometric(x: torch.Tensor, params: AugmentParams) -> torch.Tensor:
    """Flip, rotate, then border-crop-and-resize one (C, H, W) map.

    The identical resampling runs for every map in a sample, so images and
    ground truth stay aligned by construction.
    """
    if x.dim() != 3:
        raise ValueError(f"apply_geometric expects (C, H, W), got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if params.flip:
        x = torch.flip(x, dims=[-1])
    if params.angle_deg != 0.0:
        theta_rad = math.radians(params.angle_deg)
        cos, sin = math.cos(theta_rad), math.sin(theta_rad)
        theta = x.new_tensor([[cos, -sin, 0.0], [sin, cos, 0.0]])[None]
        grid = F.affine_grid(theta, (1, x.shape[0], h, w), align_corners=False)
        x = F.grid_sample(x[None], grid, mode="bilinear", padding_mode="zeros",
                          align_corners=False)[0]
    top, bottom, left, right = params.crop
    y0, y1 = int(round(top * h)), h - int(round(bottom * h))
    x0, x1 = int(round(left * w)), w - int(round(right * w))
    if (y0, y1, x0, x1) != (0, h, 0, w):
        x = x[:, y0:y1, x0:x1]
        x = F.interpolate(x[None], size=(h, w), mode="bilinear",
                          align_corners=False)[0]
    return x


def augment(pair: ImagePair, gt: torch.Tensor,
            rng: random.Random) -> tuple[ImagePair, torch.Tensor]:
    """Apply one shared geometric draw to rgb, thermal, and ground truth."""
    params = draw_augment_params(rng)
    rgb = apply_geometric(pair.rgb[0], params)[None]
    thermal = apply_geometric(pair.thermal[0], params)[None]
    gt_soft = apply_geometric(gt[0], params)[None]
    return (ImagePair(rgb=rgb, thermal=thermal, name=pair.name),
            (gt_soft > 0.5).to(gt.dtype))


def make_synthetic_dataset(root: str | Path, n: int = 8, size: int = 64,
                           seed: int = 0) -> Path:
    """Write a small learnable rgb/thermal/gt tree: one bright blob per image,
    visible in both modalities, on noisy backgrounds."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for sub in ("RGB", "T", "GT"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(n):
        cy, cx = rng.uniform(0.3, 0.7, size=2) * size
        ry, rx = rng.uniform(0.12, 0.28, size=2) * size
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0

        rgb = rng.uniform(0.0, 0.25, size=(size, size, 3))
        tint = rng.uniform(0.6, 0.9, size=3)
        rgb[mask] = tint + rng.normal(0, 0.03, size=(int(mask.sum()), 3))
        thermal = rng.uniform(0.0, 0.2, size=(size, size))
        thermal[mask] = 0.8 + rng.normal(0, 0.03, size=int(mask.sum()))

        stem = f"pair{i:03d}"
        Image.fromarray(np.clip(rgb * 255, 0, 255).astype(np.uint8)).save(
            root / "RGB" / f"{stem}.png")
        Image.fromarray(np.clip(thermal * 255, 0, 255).astype(np.uint8),
                        mode="L").save(root / "T" / f"{stem}.png")
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(
            root / "GT" / f"{stem}.png")
    return root


def save_saliency_map(m: torch.Tensor, path: str | Path,
                      size: tuple[int, int] | None = None) -> None:
    """Write a probability map as an 8-bit grayscale image, round(255 * M)."""
    if m.dim() == 4:
        m = m[0]
    if m.dim() == 3:
        m = m[0]
    if size is not None and m.shape != size:
        m = F.interpolate(m[None, None], size=size, mode="bilinear",
                          align_corners=False)[0, 0]
    arr = np.clip(np.rint(m.detach().cpu().numpy() * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path)
