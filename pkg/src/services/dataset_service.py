"""
On-disk demonstration datasets (format "sim-v1").

A dataset directory holds manifest.json plus one binary block per
demonstration under demos/ and one per skill clip under skills/. Blocks are
little-endian float64: a header (T, G, C, D, n_boundaries), the frames, the
positions, the velocities and the boundaries.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import DATASET_VERSION, ArtifactNames
from src.core.errors import ArtifactError
from src.sim.demo import Demonstration
from src.sim.world import N_CHANNELS, TaskSpec
from src.skills.dmp import Trajectory

logger = logging.getLogger(__name__)

BLOCK_DTYPE = np.dtype("<f8")
HEADER_SIZE = 5


@dataclass
class Dataset:
    """Demonstrations grouped by split, plus the per-skill clips."""

    delta: float
    grid_size: int
    train: List[Demonstration] = field(default_factory=list)
    test: List[Demonstration] = field(default_factory=list)
    clips: Dict[str, List[Trajectory]] = field(default_factory=dict)
    seed: int = 0


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# =============================================================================
# BLOCKS
# =============================================================================


def _write_block(
    path: Path, frames: np.ndarray, traj: Trajectory, boundaries: Tuple[int, ...]
) -> None:
    n, dim = traj.positions.shape
    grid = frames.shape[1] if frames.size else 0
    channels = frames.shape[3] if frames.size else 0
    header = np.array([n, grid, channels, dim, len(boundaries)], dtype=BLOCK_DTYPE)
    payload = np.concatenate(
        [
            header,
            frames.astype(BLOCK_DTYPE).ravel(),
            traj.positions.astype(BLOCK_DTYPE).ravel(),
            traj.velocities.astype(BLOCK_DTYPE).ravel(),
            np.asarray(boundaries, dtype=BLOCK_DTYPE),
        ]
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    payload.astype(BLOCK_DTYPE).tofile(path)


def _read_block(path: Path, dt: float) -> Tuple[np.ndarray, Trajectory, Tuple[int, ...]]:
    try:
        data = np.fromfile(path, dtype=BLOCK_DTYPE)
    except OSError as e:
        raise ArtifactError(f"cannot read block {path}: {e}", path=str(path)) from e
    if data.size < HEADER_SIZE:
        raise ArtifactError(f"block {path} is truncated", path=str(path))
    n, grid, channels, dim, n_bounds = (int(v) for v in data[:HEADER_SIZE])
    sizes = [n * grid * grid * channels, n * dim, n * dim, n_bounds]
    if data.size != HEADER_SIZE + sum(sizes):
        raise ArtifactError(f"block {path} has {data.size} values, header implies {HEADER_SIZE + sum(sizes)}", path=str(path))
    offsets = np.cumsum([HEADER_SIZE] + sizes)
    frames = data[offsets[0] : offsets[1]].reshape(n, grid, grid, channels) if grid else np.zeros((0,))
    positions = data[offsets[1] : offsets[2]].reshape(n, dim)
    velocities = data[offsets[2] : offsets[3]].reshape(n, dim)
    boundaries = tuple(int(b) for b in data[offsets[3] : offsets[4]])
    return frames, Trajectory(dt, positions, velocities), boundaries


def write_demo_block(path: Path, demo: Demonstration) -> None:
    _write_block(path, demo.frames, demo.traj, demo.hidden_segmentation)


def read_demo_block(path: Path, spec: TaskSpec, dt: float, task_id: int = 0) -> Demonstration:
    frames, traj, boundaries = _read_block(path, dt)
    if frames.ndim != 4 or frames.shape[3] != N_CHANNELS:
        raise ArtifactError(f"block {path} holds no frames", path=str(path))
    return Demonstration(frames, traj, spec, boundaries, task_id)


def write_clip_block(path: Path, clip: Trajectory) -> None:
    _write_block(path, np.zeros((0,)), clip, ())


def read_clip_block(path: Path, dt: float) -> Trajectory:
    return _read_block(path, dt)[1]


# =============================================================================
# DATASET
# =============================================================================


def save_dataset(dataset: Dataset, out_dir: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write blocks and the manifest.

    Returns:
        Path of the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    index = 0
    for split, demos in (("train", dataset.train), ("test", dataset.test)):
        for demo in demos:
            rel = f"{ArtifactNames.DEMO_DIR}/demo_{index:04d}.bin"
            write_demo_block(out_dir / rel, demo)
            entries.append(
                {
                    "index": index,
                    "file": rel,
                    "split": split,
                    "task_id": demo.task_id,
                    "T": demo.n_frames,
                    "sha256": file_sha256(out_dir / rel),
                    "spec": demo.spec.to_dict(),
                }
            )
            index += 1
    clips = []
    for skill, trajs in dataset.clips.items():
        for i, clip in enumerate(trajs):
            rel = f"{ArtifactNames.CLIP_DIR}/{skill}_{i:02d}.bin"
            write_clip_block(out_dir / rel, clip)
            clips.append({"skill": skill, "index": i, "file": rel, "noiseless": i == 0, "sha256": file_sha256(out_dir / rel)})
    manifest = {
        "version": DATASET_VERSION,
        "delta": dataset.delta,
        "G": dataset.grid_size,
        "seed": dataset.seed,
        "specs": entries,
        "clips": clips,
    }
    manifest.update(extra or {})
    path = out_dir / ArtifactNames.DATASET_MANIFEST
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {len(entries)} demonstrations and {len(clips)} skill clips to {out_dir}")
    return path


def read_manifest(data_dir: Path) -> Dict[str, Any]:
    path = Path(data_dir) / ArtifactNames.DATASET_MANIFEST
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise ArtifactError(f"dataset manifest not found: {path}", path=str(path)) from e
    except json.JSONDecodeError as e:
        raise ArtifactError(f"dataset manifest {path} is not valid JSON: {e}", path=str(path)) from e
    if manifest.get("version") != DATASET_VERSION:
        raise ArtifactError(f"{path}: expected version {DATASET_VERSION}, got {manifest.get('version')}", path=str(path))
    return manifest


def load_dataset(data_dir: Path, load_demos: bool = True) -> Dataset:
    """Read a dataset written by save_dataset."""
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    dataset = Dataset(float(manifest["delta"]), int(manifest["G"]), seed=int(manifest.get("seed", 0)))
    if load_demos:
        for entry in manifest["specs"]:
            demo = read_demo_block(
                data_dir / entry["file"], TaskSpec.from_dict(entry["spec"]), dataset.delta, int(entry["task_id"])
            )
            (dataset.train if entry["split"] == "train" else dataset.test).append(demo)
    for entry in sorted(manifest.get("clips", []), key=lambda e: (e["skill"], e["index"])):
        dataset.clips.setdefault(entry["skill"], []).append(read_clip_block(data_dir / entry["file"], dataset.delta))
    logger.info(f"Loaded {len(dataset.train)} train / {len(dataset.test)} test demonstrations from {data_dir}")
    return dataset


def export_csv(dataset: Dataset, out_dir: Path) -> List[Path]:
    """One t,x,y,vx,vy CSV per demonstration."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, demo in enumerate(dataset.train + dataset.test):
        frame = pd.DataFrame(
            {
                "t": demo.traj.times,
                "x": demo.traj.positions[:, 0],
                "y": demo.traj.positions[:, 1],
                "vx": demo.traj.velocities[:, 0],
                "vy": demo.traj.velocities[:, 1],
            }
        )
        path = out_dir / f"demo_{i:04d}.csv"
        frame.to_csv(path, index=False)
        paths.append(path)
    return paths
