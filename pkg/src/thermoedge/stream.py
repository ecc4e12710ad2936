"""Real-time frame streaming: edge server and camera-simulator client.

The server runs two stages per connection, a network reader and a
classifier worker, joined by a capacity-1 hand-off.  When a new frame
arrives while one is still waiting, the waiting frame is dropped.
"""

from __future__ import annotations

import itertools
import logging
import select
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from . import protocol as P
from .data import PreprocessConfig, generate_synthetic, load_dataset_dir, preprocess
from .errors import ConnectionRefusedByServer, ConnectionResetByServer, ProtocolError
from .runtime import RuntimeModel, load_model

log = logging.getLogger(__name__)

Classifier = Callable[[np.ndarray], Tuple[int, float]]
Address = Tuple[str, int]


def parse_address(addr: str) -> Address:
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1", int(port))


@dataclass
class SessionStats:
    """Per-connection bookkeeping.  Server side fills received/classified/
    dropped; the client fills sent and the per-frame timing lists."""

    frames_sent: int = 0
    frames_received: int = 0
    frames_classified: int = 0
    frames_dropped: int = 0
    wall_span_s: float = 0.0
    latencies_us: List[int] = field(default_factory=list)


class LatestSlot:
    """Capacity-1 hand-off that keeps only the newest item."""

    def __init__(self):
        self._cond = threading.Condition()
        self._item = None
        self._closed = False

    def put(self, item) -> bool:
        """Store ``item``; returns True if a waiting item was discarded."""
        with self._cond:
            dropped = self._item is not None
            self._item = item
            self._cond.notify()
            return dropped

    def get(self):
        """Block for the next item; None once closed and drained."""
        with self._cond:
            while self._item is None and not self._closed:
                self._cond.wait()
            item, self._item = self._item, None
            return item

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()


def model_classifier(model: RuntimeModel) -> Classifier:
    cfg = PreprocessConfig(model.model.input_size)

    def classify(image: np.ndarray) -> Tuple[int, float]:
        out = model.infer(preprocess(image, cfg))
        return out.class_index, out.confidence

    return classify


class EdgeServer:
    """Accepts connections and classifies streamed frames one at a time."""

    def __init__(self, classifier: Classifier, bind: Address = ("127.0.0.1", 0),
                 clock: Callable[[], float] = time.perf_counter):
        self.classify = classifier
        self.clock = clock
        self.sessions: List[SessionStats] = []
        self._lock = threading.Lock()
        self._sock = socket.create_server(bind)
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []

    @classmethod
    def from_model(cls, model: RuntimeModel, bind: Address = ("127.0.0.1", 0)) -> "EdgeServer":
        if not model.warmed_up:
            model.warmup()
        return cls(model_classifier(model), bind)

    @property
    def address(self) -> Address:
        return self._sock.getsockname()[:2]

    def start(self) -> "EdgeServer":
        t = threading.Thread(target=self.serve_forever, name="edge-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def serve_forever(self):
        self._sock.settimeout(0.1)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self, timeout: float = 5.0):
        self._stop.set()
        self._sock.close()
        for t in self._threads:
            if t is not threading.current_thread():
                t.join(timeout)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _handle(self, conn: socket.socket):
        stats = SessionStats()
        slot = LatestSlot()
        send_lock = threading.Lock()
        worker = threading.Thread(target=self._work, args=(conn, slot, stats, send_lock), daemon=True)
        worker.start()
        t_start = self.clock()
        last_seq = None
        try:
            while True:
                msg = P.read_message(conn)
                if msg is None or isinstance(msg, P.CloseMessage):
                    break
                if not isinstance(msg, P.FrameMessage):
                    raise ProtocolError(f"unexpected {type(msg).__name__} from client")
                if last_seq is not None and msg.seq <= last_seq:
                    raise ProtocolError(f"non-increasing seq {msg.seq} after {last_seq}")
                last_seq = msg.seq
                with self._lock:
                    stats.frames_received += 1
                    if slot.put(msg):
                        stats.frames_dropped += 1
        except (ProtocolError, OSError) as exc:
            log.warning("closing connection: %s", exc)
        finally:
            slot.close()
            worker.join()
            stats.wall_span_s = self.clock() - t_start
            try:
                with send_lock:
                    conn.sendall(P.encode_close())
            except OSError:
                pass
            conn.close()
            with self._lock:
                self.sessions.append(stats)

    def _work(self, conn, slot: LatestSlot, stats: SessionStats, send_lock):
        while True:
            msg = slot.get()
            if msg is None:
                return
            t0 = self.clock()
            cls, conf = self.classify(msg.image())
            latency = max(1, int(round((self.clock() - t0) * 1e6)))
            with self._lock:
                stats.frames_classified += 1
                stats.latencies_us.append(latency)
            try:
                with send_lock:
                    conn.sendall(P.encode_result(P.ResultMessage(msg.seq, cls, conf, latency)))
            except OSError:
                pass


def serve(model_path, bind: Address = ("127.0.0.1", 5500), label: Optional[str] = None,
          ready: Optional[Callable[[Address], None]] = None) -> List[SessionStats]:
    """Load (and warm up) a model and serve until interrupted."""
    model = load_model(model_path, label=label)
    server = EdgeServer.from_model(model, bind)
    log.info("serving %s (%s) on %s:%d", model_path, model.backend.value, *server.address)
    if ready:
        ready(server.address)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return server.sessions


# ---------------------------------------------------------------- sources

def fixed_source(image: np.ndarray) -> Iterator[np.ndarray]:
    """The same frame forever (a stationary camera)."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    return itertools.repeat(image)


def dataset_source(path) -> Iterator[np.ndarray]:
    ds = load_dataset_dir(path)
    return itertools.cycle([s.image for s in ds.samples])


def synthetic_source(seed: int = 0, size: int = 32, n_per_class: int = 4) -> Iterator[np.ndarray]:
    ds = generate_synthetic(n_per_class, size, seed)
    return itertools.cycle([s.image for s in ds.samples])


def wall_image(width: int = 384, height: int = 288, seed: int = 0) -> np.ndarray:
    """A featureless warm wall: flat gray plus sensor noise."""
    rng = np.random.default_rng(seed)
    img = 120.0 + rng.normal(0.0, 2.0, size=(height, width))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- client

@dataclass
class ClientReport:
    stats: SessionStats
    results: List[P.ResultMessage]
    send_times: Dict[int, float]
    arrival_times: Dict[int, float]
    send_span_s: float
    server_closed: bool


def stream_client(address: Address, source: Iterable[np.ndarray], rate: Optional[float] = 25.0,
                  count: int = 3340, *, clock: Callable[[], float] = time.perf_counter,
                  drain_timeout: float = 30.0) -> ClientReport:
    """Send ``count`` frames paced at ``rate`` Hz (None or 0 = unpaced).

    Pacing schedules each send one interval after the previous actual send,
    so a late frame never triggers a catch-up burst.
    """
    try:
        sock = socket.create_connection(address, timeout=10.0)
    except ConnectionRefusedError as exc:
        raise ConnectionRefusedByServer(f"connection refused by {address[0]}:{address[1]}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    interval = 1.0 / rate if rate else 0.0
    buf = P.MessageBuffer()
    results: List[P.ResultMessage] = []
    arrivals: Dict[int, float] = {}
    sends: Dict[int, float] = {}
    stats = SessionStats()
    closed = False

    def drain(timeout: float) -> None:
        nonlocal closed
        while not closed:
            ready, _, _ = select.select([sock], [], [], max(timeout, 0.0))
            if not ready:
                return
            try:
                chunk = sock.recv(65536)
            except ConnectionResetError as exc:
                raise ConnectionResetByServer("connection reset by server") from exc
            if not chunk:
                closed = True
                return
            now = clock()
            for msg in buf.feed(chunk):
                if isinstance(msg, P.CloseMessage):
                    closed = True
                elif isinstance(msg, P.ResultMessage):
                    if msg.seq not in sends or msg.seq in arrivals:
                        raise ProtocolError(f"unexpected result seq {msg.seq}")
                    arrivals[msg.seq] = now
                    results.append(msg)
                    stats.latencies_us.append(msg.latency_us)
                else:
                    raise ProtocolError("server sent a frame")
            timeout = 0.0

    frames = iter(source)
    try:
        next_send = clock()
        first_send = None
        for seq in range(1, count + 1):
            while True:
                wait = next_send - clock()
                if wait <= 0:
                    break
                drain(wait)
            image = next(frames)
            t = clock()
            try:
                sock.sendall(P.encode_frame(P.FrameMessage.from_image(seq, image)))
            except (BrokenPipeError, ConnectionResetError) as exc:
                raise ConnectionResetByServer("connection reset by server") from exc
            sends[seq] = t
            first_send = t if first_send is None else first_send
            stats.frames_sent += 1
            next_send = t + interval
            drain(0.0)
        last_send = sends.get(count, first_send or 0.0)
        sock.sendall(P.encode_close())
        deadline = clock() + drain_timeout
        while not closed and clock() < deadline:
            drain(min(0.5, deadline - clock()))
    finally:
        sock.close()
    stats.frames_received = len(results)
    stats.frames_classified = len(results)
    stats.frames_dropped = stats.frames_sent - len(results)
    span = (last_send - first_send) if first_send is not None else 0.0
    stats.wall_span_s = span
    return ClientReport(stats, results, sends, arrivals, span, closed)
