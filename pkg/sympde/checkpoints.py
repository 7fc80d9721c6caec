"""Checkpoint stores for per-step networks, plus the key=value manifest format."""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from loguru import logger

from .errors import ConfigError, StructuralError
from .nets import NetParams, load_params, save_params


def format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if value is None:
        return ""
    return str(value).replace("\n", " ")


def dump_key_values(entries: Mapping[str, Any]) -> str:
    """One ``key=value`` line per entry, in insertion order."""
    lines = []
    for key, value in entries.items():
        if "=" in key or "\n" in key:
            raise StructuralError(f"manifest key {key!r} contains a separator")
        lines.append(f"{key}={format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise StructuralError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def write_key_values(path: Union[str, Path], entries: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_key_values(entries), encoding="utf-8")
    return path


def read_key_values(path: Union[str, Path]) -> Dict[str, str]:
    return parse_key_values(Path(path).read_text(encoding="utf-8"))


class CheckpointStore(ABC):
    """Where a run keeps its per-step networks and its manifest."""

    @abstractmethod
    def save(self, step: int, net: str, params: NetParams) -> None:
        """Store the ``net`` ("value" or "derivative") of time step ``step``."""

    @abstractmethod
    def load(self, step: int, net: str) -> NetParams:
        """Load a previously stored network."""

    @abstractmethod
    def entries(self) -> List[Tuple[int, str]]:
        """Stored (step, net) pairs in step order."""

    @abstractmethod
    def write_manifest(self, entries: Mapping[str, Any]) -> None:
        """Replace the run manifest."""

    @abstractmethod
    def read_manifest(self) -> Dict[str, str]:
        """Return the run manifest as strings."""


class MemoryCheckpointStore(CheckpointStore):
    """Keeps everything in dictionaries; used by tests and throwaway runs."""

    def __init__(self) -> None:
        self._nets: Dict[Tuple[int, str], NetParams] = {}
        self._manifest: Dict[str, str] = {}

    def save(self, step: int, net: str, params: NetParams) -> None:
        self._nets[(step, net)] = params

    def load(self, step: int, net: str) -> NetParams:
        try:
            return self._nets[(step, net)]
        except KeyError:
            raise StructuralError(f"no checkpoint for step {step}, net {net!r}") from None

    def entries(self) -> List[Tuple[int, str]]:
        return sorted(self._nets)

    def write_manifest(self, entries: Mapping[str, Any]) -> None:
        self._manifest = parse_key_values(dump_key_values(entries))

    def read_manifest(self) -> Dict[str, str]:
        return dict(self._manifest)


class DirectoryCheckpointStore(CheckpointStore):
    """``step_<k>_<net>.bin`` files plus ``manifest.txt`` in one directory."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, step: int, net: str) -> Path:
        return self.root / f"step_{step:04d}_{net}.bin"

    def save(self, step: int, net: str, params: NetParams) -> None:
        save_params(params, self._path(step, net))
        logger.debug(f"checkpoint step {step} {net} -> {self._path(step, net)}")

    def load(self, step: int, net: str) -> NetParams:
        path = self._path(step, net)
        if not path.exists():
            raise StructuralError(f"no checkpoint for step {step}, net {net!r} in {self.root}")
        return load_params(path)

    def entries(self) -> List[Tuple[int, str]]:
        found = []
        for path in self.root.glob("step_*_*.bin"):
            _, step, net = path.stem.split("_", 2)
            found.append((int(step), net))
        return sorted(found)

    def write_manifest(self, entries: Mapping[str, Any]) -> None:
        write_key_values(self.root / "manifest.txt", entries)

    def read_manifest(self) -> Dict[str, str]:
        path = self.root / "manifest.txt"
        return read_key_values(path) if path.exists() else {}


def create_checkpoint_store(kind: str, root: Optional[Union[str, Path]] = None) -> CheckpointStore:
    """Factory function to create checkpoint stores."""
    if kind.lower() == "memory":
        return MemoryCheckpointStore()
    if kind.lower() == "directory":
        if root is None:
            raise ConfigError("a directory checkpoint store needs a root path")
        return DirectoryCheckpointStore(root)
    raise ConfigError(f"Unknown checkpoint store type: {kind}. Supported: memory, directory")
