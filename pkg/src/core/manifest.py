"""
Run manifests.

Every command writes a ``manifest.json`` describing what it ran: the command,
the configuration, the inputs, the seed, the output directory and how long
each stage took. Rerunning the same manifest reproduces the outputs bitwise.
"""
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Union

from src.core.errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class StageTime:
    stage: str
    ms: float


@dataclass
class RunManifest:
    """
    Description of one command run.

    Attributes:
        command: Command name, e.g. "project"
        config: Preset name or config file path
        inputs: Input paths in the order they were given
        seed: Seed used by the run
        out_dir: Output directory
        timings: Wall-clock time per stage, in execution order
        exit_code: Process exit status
    """

    command: str
    config: str
    inputs: List[str] = field(default_factory=list)
    seed: int = 0
    out_dir: str = "."
    timings: List[StageTime] = field(default_factory=list)
    exit_code: int = 0

    def __post_init__(self):
        if not self.command:
            raise ValidationError("manifest needs a command name")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time the enclosed block and append it to ``timings``."""
        start = time.perf_counter()
        logger.info(f"Stage '{name}' started")
        try:
            yield
        finally:
            ms = (time.perf_counter() - start) * 1000.0
            self.timings.append(StageTime(name, ms))
            logger.info(f"Stage '{name}' finished in {ms:.1f} ms")

    @property
    def total_ms(self) -> float:
        return sum(t.ms for t in self.timings)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunManifest":
        try:
            timings = [StageTime(str(t["stage"]), float(t["ms"])) for t in raw.get("timings", [])]
            return cls(
                command=str(raw["command"]),
                config=str(raw["config"]),
                inputs=[str(p) for p in raw.get("inputs", [])],
                seed=int(raw.get("seed", 0)),
                out_dir=str(raw.get("out_dir", ".")),
                timings=timings,
                exit_code=int(raw.get("exit_code", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"invalid manifest: {e}") from None

    def write(self, directory: Union[str, Path, None] = None) -> Path:
        """Write ``manifest.json`` into ``directory`` (default: ``out_dir``)."""
        path = Path(directory if directory is not None else self.out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, str(path), e.lineno) from None
    if not isinstance(raw, dict):
        raise ParseError("expected an object", str(path), field="$")
    try:
        return RunManifest.from_dict(raw)
    except ValidationError as e:
        raise ParseError(str(e), str(path)) from None
