"""Benchmark protocol: latency statistics, streaming FPS, accuracy, reports."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import EmptyDatasetError
from .runtime import RuntimeModel
from .stream import Address, fixed_source, stream_client, wall_image

DEFAULT_N = 3340
DEFAULT_FRAMES = 3340
DEFAULT_RATE = 25.0

CSV_COLUMNS = ["model", "backend", "size_bytes", "accuracy", "first_ms", "mean_ms", "std_ms", "fps", "drops"]


@dataclass(frozen=True)
class LatencyStats:
    first_ms: float
    mean_ms: float
    std_ms: float
    n: int


@dataclass(frozen=True)
class FpsReport:
    frames: int
    elapsed_s: float
    fps: float
    drops: int


@dataclass
class SizeAccuracyRow:
    model: str
    backend: str
    size_bytes: int
    accuracy: float


@dataclass
class ReportRow:
    model: str
    backend: str
    size_bytes: int
    accuracy: float
    first_ms: Optional[float] = None
    mean_ms: Optional[float] = None
    std_ms: Optional[float] = None
    fps: Optional[float] = None
    drops: Optional[int] = None

    @classmethod
    def combine(cls, row: SizeAccuracyRow, latency: Optional[LatencyStats] = None,
                fps: Optional[FpsReport] = None) -> "ReportRow":
        r = cls(row.model, row.backend, row.size_bytes, row.accuracy)
        if latency is not None:
            r.first_ms, r.mean_ms, r.std_ms = latency.first_ms, latency.mean_ms, latency.std_ms
        if fps is not None:
            r.fps, r.drops = fps.fps, fps.drops
        return r


@dataclass
class RunManifest:
    seed: int
    config: dict
    artifact_version: str = __version__
    timestamp: str = ""

    def __post_init__(self):
        if not self.timestamp:
            self.timestamp = manifest_timestamp()


def manifest_timestamp() -> str:
    """UTC ISO-8601; honours SOURCE_DATE_EPOCH for reproducible reports."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.replace(microsecond=0).isoformat()


def latency_stats(first_ms: float, samples_ms: Sequence[float]) -> LatencyStats:
    """Mean and sample (n-1) standard deviation; ``first_ms`` is excluded."""
    x = np.asarray(samples_ms, dtype=np.float64)
    if x.size < 1:
        raise ValueError("need at least one timed sample")
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return LatencyStats(float(first_ms), float(x.mean()), std, int(x.size))


def bench_inference(model: RuntimeModel, test_inputs, n: int = DEFAULT_N) -> LatencyStats:
    """Warm up once, then time ``n`` inferences cycling through the inputs.

    Timing uses the model's clock, which tests replace with a synthetic one.
    """
    inputs = list(test_inputs) if not isinstance(test_inputs, np.ndarray) else test_inputs
    if len(inputs) == 0:
        raise EmptyDatasetError("no test inputs")
    if n < 2:
        raise ValueError("n must be >= 2 (one warmup plus at least one timed run)")
    model.warmup()
    first_us = model.first_latency_us
    timed = []
    for i in range(n):
        x = np.asarray(inputs[i % len(inputs)], dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        timed.append(model.infer(x).latency_us / 1000.0)
    return latency_stats(first_us / 1000.0, timed)


def fps_from_client(report) -> FpsReport:
    """Sum of per-frame receive + classify spans at the edge server.

    A frame's span runs from the moment the server is ready to receive it
    (the previous result's arrival; the first send for the first frame) to
    its own result's arrival, so connection setup, warmup and the client's
    drain/teardown are excluded.
    """
    seqs = sorted(report.arrival_times)
    elapsed, prev = 0.0, None
    for seq in seqs:
        start = report.send_times[min(report.send_times)] if prev is None else prev
        elapsed += report.arrival_times[seq] - start
        prev = report.arrival_times[seq]
    frames = len(seqs)
    fps = frames / elapsed if elapsed > 0 else 0.0
    return FpsReport(frames, elapsed, fps, report.stats.frames_sent - frames)


def bench_fps(address: Address, frames: int = DEFAULT_FRAMES, rate: Optional[float] = DEFAULT_RATE,
              image: Optional[np.ndarray] = None) -> FpsReport:
    """Stream a fixed wall image (stationary camera) and report server FPS."""
    image = wall_image() if image is None else image
    report = stream_client(address, fixed_source(image), rate=rate, count=frames)
    return fps_from_client(report)


def bench_accuracy(model: RuntimeModel, test_set) -> float:
    """Argmax accuracy through the runtime (lowest index wins ties)."""
    x, y = test_set
    if len(x) == 0:
        raise EmptyDatasetError("test set is empty")
    pred = model.predict_batches(x).argmax(axis=1)
    return float(np.mean(pred == np.asarray(y)))


# ---------------------------------------------------------------- reports

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def _sorted(rows: Sequence[ReportRow]) -> List[ReportRow]:
    return sorted(rows, key=lambda r: (r.size_bytes, r.model, r.backend))


def render_csv(rows: Sequence[ReportRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in _sorted(rows):
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return out.getvalue()


def render_json(rows: Sequence[ReportRow], manifest: RunManifest) -> str:
    doc = {
        "manifest": asdict(manifest),
        "rows": [{c: getattr(r, c) for c in CSV_COLUMNS} for r in _sorted(rows)],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def emit_report(rows: Sequence[ReportRow], manifest: RunManifest, fmt: str = "json", path=None) -> str:
    """Render rows (sorted by size ascending) and write them to ``path``.

    CSV carries the manifest as leading ``#`` comment lines.
    """
    if fmt == "json":
        text = render_json(rows, manifest)
    elif fmt == "csv":
        header = "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in sorted(asdict(manifest).items()))
        text = header + render_csv(rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_report(path) -> tuple:
    """Read a report written by ``emit_report`` back into rows + manifest."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        return [ReportRow(**r) for r in doc["rows"]], RunManifest(**doc["manifest"])
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = json.loads(v)
        else:
            body.append(line)
    rows = []
    for rec in csv.DictReader(body):
        kw = {}
        for c in CSV_COLUMNS:
            v = rec[c]
            if c in ("model", "backend"):
                kw[c] = v
            elif v == "":
                kw[c] = None
            elif c in ("size_bytes", "drops"):
                kw[c] = int(v)
            else:
                kw[c] = float(v)
        rows.append(ReportRow(**kw))
    return rows, RunManifest(**meta)


def merge_reports(paths, fmt: str = "json", path=None) -> str:
    rows, manifests = [], []
    for p in paths:
        r, m = load_report(p)
        rows.extend(r)
        manifests.append(m)
    if not manifests:
        raise ValueError("nothing to merge")
    first = manifests[0]
    merged = RunManifest(first.seed, {"merged": [asdict(m) for m in manifests]},
                         first.artifact_version, first.timestamp)
    return emit_report(rows, merged, fmt, path)
