"""Run provenance: config hashing, the append-only event log and CSV writers."""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

EVENT_FIELDS = ("step", "event", "node", "parent", "n", "qhat", "coverage", "detail")


def config_hash(cfg) -> str:
    d = asdict(cfg) if is_dataclass(cfg) else dict(cfg)
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 10))
    return v


def write_csv(path, fieldnames, rows, chash: str) -> Path:
    """CSV with a header row and a trailing ``# config_hash=...`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in fieldnames})
        fh.write(f"# config_hash={chash}\n")
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    events: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    env_steps: int = 0
    wall_clock: float = 0.0
    # (node, depth, episode length, n episodes) for every executed rollout batch
    rollouts: list[tuple[int, int, int, int]] = field(default_factory=list, repr=False)
    stream_path: Path | None = None
    _t0: float = field(default_factory=time.perf_counter, repr=False)
    _fh: object = field(default=None, repr=False)

    def log(self, step: int, event: str, node=None, parent=None, n=None, qhat=None,
            coverage=None, detail="") -> None:
        row = {"step": step, "event": event, "node": node, "parent": parent, "n": n,
               "qhat": qhat, "coverage": coverage, "detail": detail}
        self.events.append(row)
        if self.stream_path is not None:
            if self._fh is None:
                Path(self.stream_path).parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.stream_path, "w", newline="")
                csv.writer(self._fh, lineterminator="\n").writerow(EVENT_FIELDS)
            csv.DictWriter(self._fh, fieldnames=EVENT_FIELDS, lineterminator="\n").writerow(
                {k: _fmt(v) for k, v in row.items()})
            self._fh.flush()

    def close(self) -> None:
        self.wall_clock = time.perf_counter() - self._t0
        if self._fh is not None:
            self._fh.write(f"# config_hash={self.config_hash}\n")
            self._fh.close()
            self._fh = None

    def write_events(self, path) -> Path:
        return write_csv(path, EVENT_FIELDS, self.events, self.config_hash)
