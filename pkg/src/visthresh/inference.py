"""Standalone threshold-map inference over whole images.

A trained regressor is slid over the image on a stride grid (origins
anchored at (0, 0), no border completion); each grid cell holds the
eval-mode threshold of the patch anchored there, plus the patch's mean
luminance on the 0..255 scale for later outlier filtering.  Maps can be
decimated to a coarser grid with a block-averaging filter, min-max
normalized for visualization, and exported as CSV with a JSON sidecar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .features import augment_patch, gaussian_window, mscn_map
from .image_io import GrayImage
from .quality_model import T_MIN
from .regressor import PATCH_SIZE, PNetParams, _forward_batch, params_digest


@dataclass(eq=False)
class ThresholdMap:
    """Grid of predicted visibility thresholds with spatial metadata.

    Cell (r, c) holds the threshold of the patch anchored (top-left) at
    pixel (r * origin_stride, c * origin_stride); assigning values to
    patch centers instead is a rendering choice left to consumers.
    """

    values: np.ndarray          # (grid_rows, grid_cols), all >= T_MIN
    origin_stride: int
    patch_size: int
    source_width: int
    source_height: int
    mean_luminance: np.ndarray | None = None  # per-cell patch mean on [0, 255]
    model_digest: str | None = None

    @property
    def grid_rows(self) -> int:
        return self.values.shape[0]

    @property
    def grid_cols(self) -> int:
        return self.values.shape[1]


def predict_map(img: GrayImage, params: PNetParams, stride: int) -> ThresholdMap:
    """Predict a threshold per patch origin on the stride grid.

    Patch forwards run one at a time in eval mode, so every cell equals an
    independent single-patch prediction and repeated runs are bit-identical.
    """
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    arr = img.pixels
    if arr.shape[0] < PATCH_SIZE or arr.shape[1] < PATCH_SIZE:
        raise DataError(f"image {arr.shape} smaller than the {PATCH_SIZE}x{PATCH_SIZE} patch")
    rows = (arr.shape[0] - PATCH_SIZE) // stride + 1
    cols = (arr.shape[1] - PATCH_SIZE) // stride + 1
    maps = mscn_map(arr, gaussian_window())
    values = np.empty((rows, cols))
    luminance = np.empty((rows, cols))
    for r in range(rows):
        for c in range(cols):
            patch = augment_patch(maps, arr, (r * stride, c * stride), PATCH_SIZE)
            trace = _forward_batch(patch.channels[None], params, None)
            values[r, c] = trace.t[0]
            luminance[r, c] = patch.channels[0].mean() * 255.0
    return ThresholdMap(
        values=values,
        origin_stride=stride,
        patch_size=PATCH_SIZE,
        source_width=arr.shape[1],
        source_height=arr.shape[0],
        mean_luminance=luminance,
        model_digest=params_digest(params),
    )


def _bin_edges(n: int, target: int) -> list[int]:
    # round-half-up so the partition is reproducible bit for bit
    return [int(np.floor(i * n / target + 0.5)) for i in range(target + 1)]


def _block_mean(grid: np.ndarray, row_edges, col_edges) -> np.ndarray:
    out = np.empty((len(row_edges) - 1, len(col_edges) - 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            block = grid[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            assert block.size > 0, "decimation produced an empty bin"
            out[i, j] = block.mean()
    return out


def decimate_map(tmap: ThresholdMap, target_rows: int, target_cols: int) -> ThresholdMap:
    """Average the map down to target_rows x target_cols contiguous bins."""
    if target_rows < 1 or target_cols < 1:
        raise DataError("target grid must be at least 1x1")
    if target_rows > tmap.grid_rows or target_cols > tmap.grid_cols:
        raise DataError(
            f"target grid {target_rows}x{target_cols} exceeds source "
            f"{tmap.grid_rows}x{tmap.grid_cols}"
        )
    row_edges = _bin_edges(tmap.grid_rows, target_rows)
    col_edges = _bin_edges(tmap.grid_cols, target_cols)
    return ThresholdMap(
        values=_block_mean(tmap.values, row_edges, col_edges),
        origin_stride=tmap.origin_stride,
        patch_size=tmap.patch_size,
        source_width=tmap.source_width,
        source_height=tmap.source_height,
        mean_luminance=(
            _block_mean(tmap.mean_luminance, row_edges, col_edges)
            if tmap.mean_luminance is not None
            else None
        ),
        model_digest=tmap.model_digest,
    )


def normalize_map(tmap: ThresholdMap) -> GrayImage:
    """Min-max scale to [0, 1] for visualization; black = lowest threshold."""
    lo, hi = float(tmap.values.min()), float(tmap.values.max())
    if hi == lo:
        return GrayImage(np.full_like(tmap.values, 0.5))
    return GrayImage((tmap.values - lo) / (hi - lo))


def export_map(tmap: ThresholdMap, prefix) -> tuple[Path, Path]:
    """Write <prefix>.csv (full-precision values) and <prefix>.json sidecar."""
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    lines = [",".join(format(v, ".17g") for v in row) for row in tmap.values]
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {
        "grid_rows": tmap.grid_rows,
        "grid_cols": tmap.grid_cols,
        "origin_stride": tmap.origin_stride,
        "patch_size": tmap.patch_size,
        "source_width": tmap.source_width,
        "source_height": tmap.source_height,
        "model_digest": tmap.model_digest,
        "mean_luminance": (
            tmap.mean_luminance.tolist() if tmap.mean_luminance is not None else None
        ),
    }
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def load_map(prefix) -> ThresholdMap:
    """Read a map exported by export_map (CSV values + JSON sidecar)."""
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    if not csv_path.exists() or not json_path.exists():
        raise DataError(f"missing exported map files {csv_path} / {json_path}")
    values = np.array(
        [[float(v) for v in line.split(",")] for line in csv_path.read_text().strip().splitlines()]
    )
    meta = json.loads(json_path.read_text())
    if values.shape != (meta["grid_rows"], meta["grid_cols"]):
        raise DataError(
            f"{csv_path}: value grid {values.shape} does not match sidecar "
            f"({meta['grid_rows']}, {meta['grid_cols']})"
        )
    lum = meta.get("mean_luminance")
    return ThresholdMap(
        values=values,
        origin_stride=meta["origin_stride"],
        patch_size=meta["patch_size"],
        source_width=meta["source_width"],
        source_height=meta["source_height"],
        mean_luminance=np.array(lum) if lum is not None else None,
        model_digest=meta.get("model_digest"),
    )
