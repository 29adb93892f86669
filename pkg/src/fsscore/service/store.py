"""On-disk state: labelling sessions with append-only logs, checkpoints and jobs."""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ..model import ModelConfig, ScoreModel, init_model, load_checkpoint, save_checkpoint
from ..pairing import UncertainPair
from ..training import PreferencePair
from ..workflow import target_from_harder

log = logging.getLogger(__name__)

JOB_STATES = ("queued", "running", "done", "failed")


class NotFound(KeyError):
    pass


class Conflict(ValueError):
    pass


@dataclass
class LabelEntry:
    pair_id: str
    harder: str
    timestamp: float
    labeler: str


@dataclass
class Session:
    id: str
    source: str
    pairs: list[dict]
    labels: dict[str, LabelEntry] = field(default_factory=dict)

    @property
    def cursor(self) -> int:
        """Rank of the first unlabelled pair (len(pairs) when exhausted)."""
        for k, p in enumerate(self.pairs):
            if p["pair_id"] not in self.labels:
                return k
        return len(self.pairs)

    def apply(self, entry: LabelEntry) -> bool:
        """Record ``entry``; False if it repeats an existing identical label."""
        known = {p["pair_id"] for p in self.pairs}
        if entry.pair_id not in known:
            raise KeyError(entry.pair_id)
        prior = self.labels.get(entry.pair_id)
        if prior is not None:
            if prior.harder != entry.harder:
                raise Conflict(f"pair {entry.pair_id} already labelled harder={prior.harder}")
            return False
        self.labels[entry.pair_id] = entry
        return True

    def labelled_pairs(self) -> list[PreferencePair]:
        out = []
        for p in self.pairs:
            entry = self.labels.get(p["pair_id"])
            if entry is not None:
                out.append(PreferencePair(p["smiles_i"], p["smiles_j"], target_from_harder(entry.harder),
                                          source=f"session:{self.id}"))
        return out


class SessionStore:
    """Sessions under ``root/sessions/<id>``: ``pairs.json`` plus ``labels.jsonl``.

    Appends are serialised by one lock; in-memory state is always what a
    replay of the log would produce.
    """

    def __init__(self, root: Path):
        self.root = Path(root) / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        for d in sorted(self.root.iterdir()):
            if (d / "pairs.json").exists():
                self._sessions[d.name] = self.replay(d.name)

    def replay(self, sid: str) -> Session:
        d = self.root / sid
        meta = json.loads((d / "pairs.json").read_text())
        session = Session(sid, meta["source"], meta["pairs"])
        log_path = d / "labels.jsonl"
        if log_path.exists():
            for line in log_path.read_text().splitlines():
                if line.strip():
                    session.apply(LabelEntry(**json.loads(line)))
        return session

    def create(self, ranked: list[UncertainPair], source: str = "") -> Session:
        sid = uuid.uuid4().hex[:12]
        pairs = [{"pair_id": f"p{k:05d}", "smiles_i": u.pair.smiles_i, "smiles_j": u.pair.smiles_j,
                  "variance": u.variance} for k, u in enumerate(ranked)]
        d = self.root / sid
        d.mkdir(parents=True)
        (d / "pairs.json").write_text(json.dumps({"source": source, "pairs": pairs}, indent=1))
        (d / "labels.jsonl").touch()
        session = Session(sid, source, pairs)
        with self._lock:
            self._sessions[sid] = session
        return session

    def get(self, sid: str) -> Session:
        try:
            return self._sessions[sid]
        except KeyError:
            raise NotFound(f"unknown session {sid}") from None

    def list(self) -> list[Session]:
        return list(self._sessions.values())

    def record(self, sid: str, pair_id: str, harder: str, labeler: str) -> bool:
        session = self.get(sid)
        entry = LabelEntry(pair_id, harder, time.time(), labeler)
        with self._lock:
            if not session.apply(entry):
                return False
            with (self.root / sid / "labels.jsonl").open("a") as fh:
                fh.write(json.dumps(entry.__dict__) + "\n")
        return True


class ModelRegistry:
    """Checkpoint directories under ``root/models``; loaded models are cached read-only."""

    def __init__(self, root: Path, base_checkpoint: str | Path | None = None):
        self.root = Path(root) / "models"
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._cache: dict[str, ScoreModel] = {}
        self._paths: dict[str, Path] = {}
        if base_checkpoint is not None:
            self._paths["base"] = Path(base_checkpoint)
            self.load("base")  # fail fast on a bad checkpoint
        elif not (self.root / "base" / "meta.json").exists():
            log.warning("no base checkpoint given; initialising an untrained default model")
            save_checkpoint(init_model(ModelConfig()), self.root / "base", {"origin": "random-init"})
        for d in sorted(self.root.iterdir()):
            if (d / "meta.json").exists():
                self._paths.setdefault(d.name, d)
        self.default = "base"

    def ids(self) -> list[str]:
        return list(self._paths)

    def load(self, mid: str | None = None) -> ScoreModel:
        mid = mid or self.default
        with self._lock:
            if mid not in self._cache:
                if mid not in self._paths:
                    raise NotFound(f"unknown model {mid}")
                self._cache[mid] = load_checkpoint(self._paths[mid])
            return self._cache[mid]

    def add(self, mid: str, model: ScoreModel, provenance: dict) -> Path:
        path = save_checkpoint(model, self.root / mid, provenance)
        model.provenance = {**model.provenance, **provenance}
        with self._lock:
            self._paths[mid] = path
            self._cache[mid] = model
            self.default = mid
        return path


@dataclass
class Job:
    id: str
    kind: str
    state: str = "queued"
    detail: dict = field(default_factory=dict)

    def advance(self, state: str) -> None:
        if self.state in ("done", "failed") or JOB_STATES.index(state) <= JOB_STATES.index(self.state):
            raise ValueError(f"job {self.id}: cannot go from {self.state} to {state}")
        self.state = state


class JobQueue:
    """A single worker thread, so at most one training job runs at a time."""

    def __init__(self):
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="fsscore-job")
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn: Callable[[Job], dict], detail: dict | None = None) -> Job:
        job = Job(uuid.uuid4().hex[:12], kind, detail=dict(detail or {}))
        with self._lock:
            self._jobs[job.id] = job

        def run():
            job.advance("running")
            try:
                job.detail.update(fn(job))
            except Exception as exc:  # surfaced to the client through the job record
                log.exception("job %s failed", job.id)
                job.detail["error"] = f"{type(exc).__name__}: {exc}"
                job.advance("failed")
            else:
                job.advance("done")

        self._pool.submit(run)
        return job

    def get(self, jid: str) -> Job:
        try:
            return self._jobs[jid]
        except KeyError:
            raise NotFound(f"unknown job {jid}") from None

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)

