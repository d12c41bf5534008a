"""Two-alternative forced-choice study backend.

Serves randomized clip pairs from competing models, records rater
choices in an append-only checksummed log, and aggregates win
percentages per model pair and category. The HTTP layer is a thin
wrapper over ``EvalService`` so the logic is testable without sockets.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
import zlib
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .engine import SplitMix64

SCHEMA_VERSION = 1
CHOICES = ("left", "right")
PROMPT = "Which video is more realistic?"

_MEDIA_TYPES = {
    ".gif": "image/gif",
    ".png": "image/png",
    ".ppm": "image/x-portable-pixmap",
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
}


class EvalError(Exception):
    """Service-level failure with an HTTP status attached."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class PreferenceRecord:
    """One durable rater judgment."""

    pair_id: str
    model_a: str
    model_b: str
    left_is_a: bool
    choice: str
    rater_id: str
    timestamp_ms: int
    category: str = "all"

    def __post_init__(self):
        if self.choice not in CHOICES:
            raise ValueError(f"choice must be left or right, got {self.choice!r}")

    @property
    def chosen_model(self) -> str:
        left_model = self.model_a if self.left_is_a else self.model_b
        right_model = self.model_b if self.left_is_a else self.model_a
        return left_model if self.choice == "left" else right_model

    def to_dict(self) -> dict:
        return {"pair_id": self.pair_id, "model_a": self.model_a,
                "model_b": self.model_b, "left_is_a": self.left_is_a,
                "choice": self.choice, "rater_id": self.rater_id,
                "timestamp_ms": self.timestamp_ms, "category": self.category}

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceRecord":
        return cls(pair_id=d["pair_id"], model_a=d["model_a"],
                   model_b=d["model_b"], left_is_a=bool(d["left_is_a"]),
                   choice=d["choice"], rater_id=d["rater_id"],
                   timestamp_ms=int(d["timestamp_ms"]),
                   category=d.get("category", "all"))


def _line_crc(payload: str) -> int:
    return zlib.crc32(payload.encode("utf-8")) & 0xFFFFFFFF


class LogCorruptError(Exception):
    """A non-final log line failed its checksum."""


class PreferenceLog:
    """Append-only JSONL store, one checksummed record per line.

    A torn final line (crash mid-append) is discarded on load: its
    record was never acknowledged. A bad checksum anywhere else is
    data corruption and raises.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None

    def append(self, record: PreferenceRecord) -> None:
        """Durable append: the record is fsynced before this returns."""
        payload = json.dumps(record.to_dict(), sort_keys=True,
                             separators=(",", ":"))
        line = json.dumps({"r": payload, "crc": _line_crc(payload)},
                          separators=(",", ":")) + "\n"
        if self._fh is None:
            self._fh = open(self.path, "a", encoding="utf-8")
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def load(self) -> list:
        if not self.path.exists():
            return []
        records = []
        lines = self.path.read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for i, line in enumerate(lines):
            try:
                outer = json.loads(line)
                payload = outer["r"]
                crc = int(outer["crc"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                if i == len(lines) - 1:
                    break
                raise LogCorruptError(f"{self.path}: undecodable line {i + 1}")
            if _line_crc(payload) != crc:
                if i == len(lines) - 1:
                    break
                raise LogCorruptError(f"{self.path}: checksum mismatch on line {i + 1}")
            records.append(PreferenceRecord.from_dict(json.loads(payload)))
        return records


@dataclass(frozen=True)
class MediaClip:
    media_id: str
    category: str = "all"


@dataclass
class Experiment:
    """Registered models and their pre-rendered clips."""

    models: dict

    def __post_init__(self):
        for name, clips in self.models.items():
            if not clips:
                raise ValueError(f"model {name!r} has no clips")
        self.models = {name: [c if isinstance(c, MediaClip)
                              else MediaClip(**c) for c in clips]
                       for name, clips in self.models.items()}

    @classmethod
    def from_json(cls, source) -> "Experiment":
        if isinstance(source, (str, Path)):
            source = json.loads(Path(source).read_text())
        return cls({name: [MediaClip(c["file"], c.get("category", "all"))
                           for c in clips]
                    for name, clips in source.items()})


@dataclass
class _PendingPair:
    model_a: str
    model_b: str
    left_is_a: bool
    category: str
    left_clip: str
    right_clip: str


class EvalService:
    """Pair issuance and choice recording behind a single writer lock."""

    def __init__(self, experiment: Experiment, log_path, seed: int = 0):
        self.experiment = experiment
        self.log = PreferenceLog(log_path)
        self._rng = SplitMix64(seed)
        self._lock = threading.Lock()
        self._pending = {}
        self._answered = {}
        for rec in self.log.load():
            self._answered.setdefault(rec.pair_id, set()).add(rec.rater_id)

    def _sample_pair(self) -> _PendingPair:
        names = sorted(self.experiment.models)
        if len(names) < 2:
            raise EvalError(400, "need at least 2 registered models")
        i = int(self._rng.integers(0, len(names)))
        j = int(self._rng.integers(0, len(names) - 1))
        if j >= i:
            j += 1
        model_a, model_b = names[i], names[j]
        by_cat_a = {}
        for c in self.experiment.models[model_a]:
            by_cat_a.setdefault(c.category, []).append(c)
        by_cat_b = {}
        for c in self.experiment.models[model_b]:
            by_cat_b.setdefault(c.category, []).append(c)
        shared = sorted(set(by_cat_a) & set(by_cat_b))
        if not shared:
            raise EvalError(400,
                            f"models {model_a} and {model_b} share no category")
        cat = shared[int(self._rng.integers(0, len(shared)))]
        clip_a = by_cat_a[cat][int(self._rng.integers(0, len(by_cat_a[cat])))]
        clip_b = by_cat_b[cat][int(self._rng.integers(0, len(by_cat_b[cat])))]
        left_is_a = bool(self._rng.integers(0, 2))
        left, right = ((clip_a, clip_b) if left_is_a else (clip_b, clip_a))
        return _PendingPair(model_a, model_b, left_is_a, cat,
                            left.media_id, right.media_id)

    def next_pair(self) -> dict:
        with self._lock:
            pair = self._sample_pair()
            pair_id = uuid.uuid4().hex
            self._pending[pair_id] = pair
            return {"version": SCHEMA_VERSION, "pair_id": pair_id,
                    "left": f"/media/{pair.left_clip}",
                    "right": f"/media/{pair.right_clip}",
                    "prompt": PROMPT}

    def record_choice(self, pair_id: str, choice: str, rater_id: str) -> dict:
        if choice not in CHOICES:
            raise EvalError(400, f"choice must be one of {CHOICES}")
        if not rater_id or not isinstance(rater_id, str):
            raise EvalError(400, "rater_id required")
        with self._lock:
            answered = self._answered.get(pair_id, set())
            if rater_id in answered:
                raise EvalError(409, f"pair {pair_id} already answered")
            pair = self._pending.get(pair_id)
            if pair is None:
                if answered:
                    raise EvalError(409, f"pair {pair_id} already answered")
                raise EvalError(404, f"unknown pair {pair_id}")
            record = PreferenceRecord(
                pair_id=pair_id, model_a=pair.model_a, model_b=pair.model_b,
                left_is_a=pair.left_is_a, choice=choice, rater_id=rater_id,
                timestamp_ms=int(time.time() * 1000), category=pair.category)
            self.log.append(record)
            self._answered.setdefault(pair_id, set()).add(rater_id)
            return {"version": SCHEMA_VERSION, "status": "recorded",
                    "pair_id": pair_id}

    def results(self, exclude_raters=None) -> dict:
        with self._lock:
            records = self.log.load()
        table = aggregate(records, exclude_raters=exclude_raters)
        out = table.to_dict()
        out["version"] = SCHEMA_VERSION
        return out

    def close(self) -> None:
        self.log.close()


@dataclass
class PairCell:
    trials: int = 0
    wins: int = 0

    @property
    def pct(self) -> float:
        return 100.0 * self.wins / self.trials


@dataclass
class PreferenceTable:
    """Win percentages for ordered model pairs, split by category."""

    cells: dict = field(default_factory=dict)
    left_choices: int = 0
    total: int = 0
    excluded_raters: tuple = ()

    def categories(self, first: str, second: str) -> list:
        return sorted(cat for (a, b, cat) in self.cells
                      if (a, b) == (first, second))

    def pct(self, first: str, second: str, category: str = None) -> float:
        """Share of trials where ``first`` beat ``second``; with no
        category, the mean across this pair's category percentages."""
        if category is not None:
            cell = self.cells.get((first, second, category))
            if cell is None:
                raise KeyError(f"no records for {first} vs {second} "
                               f"in {category!r}")
            return cell.pct
        cats = self.categories(first, second)
        if not cats:
            raise KeyError(f"no records for {first} vs {second}")
        return float(np.mean([self.cells[(first, second, c)].pct
                              for c in cats]))

    @property
    def left_rate(self) -> float:
        return self.left_choices / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        pairs = {}
        for (a, b, cat), cell in sorted(self.cells.items()):
            row = pairs.setdefault((a, b), {"first": a, "second": b,
                                            "categories": {}})
            row["categories"][cat] = {"trials": cell.trials,
                                      "wins": cell.wins, "pct": cell.pct}
        for row in pairs.values():
            row["mean_pct"] = float(np.mean(
                [c["pct"] for c in row["categories"].values()]))
        return {"pairs": sorted(pairs.values(),
                                key=lambda r: (r["first"], r["second"])),
                "left_bias": {"n": self.total, "left_rate": self.left_rate},
                "excluded_raters": sorted(self.excluded_raters)}


def aggregate(records, exclude_raters=None) -> PreferenceTable:
    """Fold records into win percentages; the rater filter defaults off."""
    excluded = frozenset(exclude_raters or ())
    table = PreferenceTable(excluded_raters=tuple(excluded))
    for rec in records:
        if rec.rater_id in excluded:
            continue
        table.total += 1
        if rec.choice == "left":
            table.left_choices += 1
        winner = rec.chosen_model
        loser = rec.model_b if winner == rec.model_a else rec.model_a
        for first, second, won in ((winner, loser, 1), (loser, winner, 0)):
            cell = table.cells.setdefault((first, second, rec.category),
                                          PairCell())
            cell.trials += 1
            cell.wins += won
    return table


class _Handler(BaseHTTPRequestHandler):
    service: EvalService = None
    media_dir: Path = None
    ui_dir: Path = None

    def log_message(self, fmt, *args):
        pass

    def _send_json(self, status: int, obj: dict) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_file(self, root: Path, rel: str) -> None:
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve()) + os.sep):
            self._send_json(404, {"version": SCHEMA_VERSION,
                                  "error": "not found"})
            return
        if not target.is_file():
            self._send_json(404, {"version": SCHEMA_VERSION,
                                  "error": f"no such file {rel}"})
            return
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _MEDIA_TYPES.get(
            target.suffix.lower(), "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        try:
            if self.path == "/api/pair":
                self._send_json(200, self.service.next_pair())
            elif self.path == "/api/results":
                self._send_json(200, self.service.results())
            elif self.path.startswith("/media/") and self.media_dir:
                self._send_file(self.media_dir, self.path[len("/media/"):])
            elif self.ui_dir is not None:
                rel = self.path.lstrip("/") or "index.html"
                self._send_file(self.ui_dir, rel.split("?", 1)[0])
            else:
                self._send_json(404, {"version": SCHEMA_VERSION,
                                      "error": "not found"})
        except EvalError as exc:
            self._send_json(exc.status, {"version": SCHEMA_VERSION,
                                         "error": str(exc)})

    def do_POST(self):
        if self.path != "/api/choice":
            self._send_json(404, {"version": SCHEMA_VERSION,
                                  "error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length) or b"{}")
            ack = self.service.record_choice(
                body.get("pair_id", ""), body.get("choice", ""),
                body.get("rater_id", ""))
            self._send_json(200, ack)
        except json.JSONDecodeError:
            self._send_json(400, {"version": SCHEMA_VERSION,
                                  "error": "body is not valid JSON"})
        except EvalError as exc:
            self._send_json(exc.status, {"version": SCHEMA_VERSION,
                                         "error": str(exc)})


def make_server(service: EvalService, host: str = "127.0.0.1",
                port: int = 0, media_dir=None, ui_dir=None) -> ThreadingHTTPServer:
    """Bind an HTTP server around a service; port 0 picks a free port."""
    handler = type("BoundHandler", (_Handler,), {
        "service": service,
        "media_dir": Path(media_dir) if media_dir else None,
        "ui_dir": Path(ui_dir) if ui_dir else None,
    })
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve_forever(experiment: Experiment, log_path, host="127.0.0.1",
                  port=8080, media_dir=None, ui_dir=None, seed=0,
                  ready_line=True):
    """Blocking entry point used by the command-line wrapper."""
    service = EvalService(experiment, log_path, seed=seed)
    server = make_server(service, host, port, media_dir, ui_dir)
    if ready_line:
        print(f"serving on {server.server_address[0]}:"
              f"{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        service.close()
