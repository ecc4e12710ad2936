import inspect
import json

import numpy as np
import pytest

from thermoedge import bench as B
from thermoedge.compression import CompressedModel, ModelKind
from thermoedge.errors import EmptyDatasetError
from thermoedge.nn import Dense, Flatten, Softmax
from thermoedge.runtime import RuntimeModel
from thermoedge.stream import ClientReport, SessionStats


def tiny_model(clock):
    w = np.array([[1.0, -1.0]], np.float32)
    b = np.zeros(2, np.float32)
    return RuntimeModel(CompressedModel(ModelKind.DENSE32, [Flatten(), Dense(1, 2), Softmax()],
                                        [w, b], 1, 2), clock=clock)


def scripted_clock(durations_ms):
    """Each inference consumes two ticks; consecutive pairs differ by the given durations."""
    ticks, t = [], 0.0
    for d in durations_ms:
        ticks += [t, t + d / 1000.0]
        t += 1.0
    it = iter(ticks)
    return lambda: next(it)


def test_synthetic_clock_mean_and_sample_std():
    # warmup 50 ms is excluded; timed runs take 1, 2, 3 ms
    model = tiny_model(scripted_clock([50.0, 1.0, 2.0, 3.0]))
    s = B.bench_inference(model, np.zeros((1, 1, 1, 1), np.float32), n=3)
    assert s.n == 3
    assert s.first_ms == pytest.approx(50.0)
    assert s.mean_ms == pytest.approx(2.0, abs=1e-9)
    assert s.std_ms == pytest.approx(1.0, abs=1e-9)  # ddof=1: sqrt(2/2)


def test_latency_stats_oracle():
    x = [4.0, 7.0, 13.0, 16.0]
    s = B.latency_stats(99.0, x)
    mean = sum(x) / 4
    var = sum((v - mean) ** 2 for v in x) / 3
    assert (s.first_ms, s.mean_ms) == (99.0, mean)
    assert s.std_ms == pytest.approx(var ** 0.5, rel=1e-15)
    with pytest.raises(ValueError):
        B.latency_stats(1.0, [])


def test_default_counts():
    assert B.DEFAULT_N == B.DEFAULT_FRAMES == 3340
    assert inspect.signature(B.bench_inference).parameters["n"].default == 3340
    assert inspect.signature(B.bench_fps).parameters["frames"].default == 3340


def test_bench_inference_errors():
    model = tiny_model(scripted_clock([1.0] * 4))
    with pytest.raises(EmptyDatasetError):
        B.bench_inference(model, np.zeros((0, 1, 1, 1), np.float32), 3)
    with pytest.raises(ValueError):
        B.bench_inference(model, np.zeros((1, 1, 1, 1), np.float32), 1)


def test_bench_accuracy_hand_values():
    model = tiny_model(scripted_clock([]))
    x = np.array([1.0, -1.0, 2.0, -3.0], np.float32).reshape(4, 1, 1, 1)
    # logits [x, -x]: class 0 iff x > 0
    assert B.bench_accuracy(model, (x, np.array([0, 1, 1, 1]))) == 0.75
    with pytest.raises(EmptyDatasetError):
        B.bench_accuracy(model, (x[:0], np.array([], int)))


def test_fps_from_client_hand_timeline():
    stats = SessionStats(frames_sent=5)
    # sends at 0, 1, 2, 3, 4; results for 1, 2 and 4 (3 and 5 dropped)
    sends = {s: float(s - 1) for s in range(1, 6)}
    arrivals = {1: 0.5, 2: 1.5, 4: 3.5}
    report = ClientReport(stats, [], sends, arrivals, 4.0, True)
    fps = B.fps_from_client(report)
    assert fps.frames == 3 and fps.drops == 2
    assert fps.elapsed_s == pytest.approx(3.5)
    assert fps.fps == pytest.approx(3 / 3.5)


def rows():
    return [
        B.ReportRow("b", "int8", 3000, 0.95, 1.0, 0.5, 0.1, 25.0, 0),
        B.ReportRow("a", "single32", 12000, 0.97),
        B.ReportRow("a", "int8", 3000, 0.96, 1.5, 0.25, 0.05),
    ]


def manifest():
    return B.RunManifest(7, {"k": 1}, "1.0", "2020-01-01T00:00:00+00:00")


def test_csv_columns_and_size_order():
    text = B.emit_report(rows(), manifest(), "csv")
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    assert lines[0] == "model,backend,size_bytes,accuracy,first_ms,mean_ms,std_ms,fps,drops"
    assert [tuple(line.split(",")[:3]) for line in lines[1:]] == [
        ("a", "int8", "3000"), ("b", "int8", "3000"), ("a", "single32", "12000")]
    assert lines[3].endswith(",,,,,")
    assert "# seed: 7" in text


def test_json_is_byte_stable():
    a = B.emit_report(rows(), manifest(), "json")
    b = B.emit_report(list(reversed(rows())), manifest(), "json")
    assert a == b
    doc = json.loads(a)
    assert [r["size_bytes"] for r in doc["rows"]] == [3000, 3000, 12000]
    assert doc["manifest"]["seed"] == 7


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_load_and_merge_round_trip(tmp_path, fmt):
    p1, p2 = tmp_path / f"1.{fmt}", tmp_path / f"2.{fmt}"
    B.emit_report(rows()[:1], manifest(), fmt, p1)
    B.emit_report(rows()[1:], manifest(), fmt, p2)
    back, m = B.load_report(p1)
    assert back == rows()[:1] and m == manifest()
    merged = B.merge_reports([p2, p1], fmt, tmp_path / f"m.{fmt}")
    merged_rows, mm = B.load_report(tmp_path / f"m.{fmt}")
    assert sorted(merged_rows, key=lambda r: (r.size_bytes, r.model)) == merged_rows
    assert len(merged_rows) == 3 and len(mm.config["merged"]) == 2
    assert merged == B.merge_reports([p1, p2], fmt)  # order of inputs does not matter for rows
    with pytest.raises(ValueError):
        B.emit_report(rows(), manifest(), "xml")


def test_source_date_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert B.RunManifest(1, {}).timestamp == "1970-01-01T00:00:00+00:00"
