"""
Experiment manifests: which command ran, with which config and seeds, and
the SHA-256 of every file it wrote.
"""

import json
import logging
import subprocess
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from config.settings import BASE_DIR, ArtifactNames
from src.services.dataset_service import file_sha256

logger = logging.getLogger(__name__)


def git_describe() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=BASE_DIR,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


@dataclass
class ExperimentManifest:
    """Provenance record of one command run."""

    command: str
    config_path: str
    seeds: Dict[str, int]
    config: Dict[str, Any] = field(default_factory=dict)
    git_describe: str = field(default_factory=git_describe)
    artifacts: Dict[str, str] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    wall_seconds: float = 0.0
    _clock: float = field(default_factory=time.perf_counter, repr=False)

    def add_artifacts(self, out_dir: Path, paths: Iterable[Path]) -> None:
        """Hash files (or every file under directories) relative to out_dir."""
        out_dir = Path(out_dir)
        for path in paths:
            path = Path(path)
            files: List[Path] = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
            for f in files:
                self.artifacts[str(f.relative_to(out_dir))] = file_sha256(f)

    def add_inputs(self, paths: Iterable[Path]) -> None:
        for path in paths:
            path = Path(path)
            if path.is_file():
                self.inputs[str(path)] = file_sha256(path)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("_clock")
        return data

    def write(self, out_dir: Path, name: Optional[str] = None) -> Path:
        """
        Stop the clock and record this run in out_dir's manifest.

        The manifest keeps the latest run of every command under "commands".
        """
        self.wall_seconds = round(time.perf_counter() - self._clock, 3)
        path = Path(out_dir) / (name or ArtifactNames.EXPERIMENT_MANIFEST)
        path.parent.mkdir(parents=True, exist_ok=True)
        document = read_manifest(path)
        document.setdefault("commands", {})[self.command] = self.to_dict()
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True)
        logger.info(f"{self.command}: {len(self.artifacts)} artifacts recorded in {path} ({self.wall_seconds:.1f}s)")
        return path


def read_manifest(path: Path) -> Dict[str, Any]:
    """Existing manifest document, or an empty one."""
    path = Path(path)
    if not path.exists():
        return {"commands": {}}
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        logger.warning(f"Replacing unreadable manifest {path}: {e}")
        return {"commands": {}}
    return document if isinstance(document, dict) else {"commands": {}}
