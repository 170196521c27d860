import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusiondetect.telemetry import (FAILURE_TYPES, DataError, FailureScenario, GeneratorConfig, LogEntry,
                                    MetricSample, generate_synthetic, load_dataset, load_labels, load_logs,
                                    load_metrics, load_traces, write_dataset)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ------------------------------------------------------------------ loaders

def test_load_metrics_row_and_sorting(tmp_path):
    p = write(tmp_path / "m.csv", "instance_id,metric_name,timestamp,value\ni1,cpu,120,0.7\ni1,cpu,60,0.5\n")
    assert load_metrics(p) == [MetricSample("i1", "cpu", 60, 0.5), MetricSample("i1", "cpu", 120, 0.7)]
    assert load_metrics(p) == load_metrics(p)


def test_load_metrics_header_only(tmp_path):
    assert load_metrics(write(tmp_path / "m.csv", "instance_id,metric_name,timestamp,value\n")) == []


def test_load_metrics_nan_names_line(tmp_path):
    p = write(tmp_path / "m.csv", "instance_id,metric_name,timestamp,value\ni1,cpu,60,0.5\ni1,cpu,120,NaN\n")
    with pytest.raises(DataError, match="3"):
        load_metrics(p)


def test_load_metrics_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_metrics(tmp_path / "nope.csv")


def test_load_logs(tmp_path):
    p = write(tmp_path / "l.jsonl", '{"instance_id":"i1","timestamp":60,"raw_text":"login ok"}\n')
    assert load_logs(p) == [LogEntry("i1", 60, "login ok")]


def test_load_logs_malformed_line(tmp_path):
    p = write(tmp_path / "l.jsonl", '{"instance_id":"i1","timestamp":60,"raw_text":"a"}\n{oops\n')
    with pytest.raises(DataError, match="2"):
        load_logs(p)


def test_load_traces_negative_duration(tmp_path):
    rec = {"trace_id": "t", "span_id": "s", "instance_id": "i1", "start_ts": 0, "duration_ms": -1}
    with pytest.raises(DataError):
        load_traces(write(tmp_path / "t.jsonl", json.dumps(rec) + "\n"))


def test_load_traces_optional_fields(tmp_path):
    rec = {"trace_id": "t", "span_id": "s", "instance_id": "i1", "start_ts": 5, "duration_ms": 3.5}
    (span,) = load_traces(write(tmp_path / "t.jsonl", json.dumps(rec) + "\n"))
    assert span.parent_span_id is None and span.status_code is None


def test_load_labels_start_after_end(tmp_path):
    rec = {"instance_id": "i1", "start_ts": 120, "end_ts": 60, "failure_type": "rt_spike"}
    with pytest.raises(DataError):
        load_labels(write(tmp_path / "y.jsonl", json.dumps(rec) + "\n"))


def test_dataset_write_load_round_trip(tmp_path):
    ds = generate_synthetic(GeneratorConfig(duration_minutes=30, n_instances=2), 1)
    counts = write_dataset(ds, tmp_path, {"seed": 1})
    back = load_dataset(tmp_path)
    assert back.metrics == ds.metrics and back.logs == ds.logs and back.spans == ds.spans
    # recount rows straight from the files
    rows = {name: sum(1 for line in (tmp_path / name).read_text().splitlines() if line.strip())
            for name in counts}
    rows["metrics.csv"] -= 1  # header
    assert rows == counts == {"metrics.csv": len(ds.metrics), "logs.jsonl": len(ds.logs),
                              "traces.jsonl": len(ds.spans), "labels.jsonl": len(ds.labels)}


# ------------------------------------------------------------------ generator

def test_no_failures_no_labels():
    assert generate_synthetic(GeneratorConfig(duration_minutes=20), 0).labels == ()


def test_generator_is_deterministic():
    cfg = GeneratorConfig(duration_minutes=60, n_instances=2,
                          failures=(FailureScenario("combined", 1, 20, 5),))
    assert generate_synthetic(cfg, 7) == generate_synthetic(cfg, 7)
    assert generate_synthetic(cfg, 7) != generate_synthetic(cfg, 8)


def test_rt_spike_magnitude():
    cfg = GeneratorConfig(duration_minutes=1440, failures=(FailureScenario("rt_spike", 0, 700, 11),))
    ds = generate_synthetic(cfg, 0)
    minute = np.array([s.start_ts // 60000 for s in ds.spans])
    rt = np.array([s.duration_ms for s in ds.spans])
    inside = (minute >= 700) & (minute <= 710)
    normal_median = np.median(rt[~inside])
    assert inside.any() and np.all(rt[inside] >= 10 * normal_median)


def metric_array(ds, name):
    return np.array([m.value for m in ds.metrics if m.metric_name == name])


@pytest.mark.parametrize("kind,sign", [("metric_surge", 1), ("metric_drop", -1)])
def test_metric_shift_exceeds_five_sigma(kind, sign):
    base = GeneratorConfig(duration_minutes=600)
    hit = GeneratorConfig(duration_minutes=600, failures=(FailureScenario(kind, 0, 300, 30, metric=2),))
    a, b = metric_array(generate_synthetic(base, 3), "disk_io"), metric_array(generate_synthetic(hit, 3), "disk_io")
    diff = (b - a)[300:330]
    assert np.all(sign * diff >= 5 * base.noise_sigma)
    assert not (b - a)[:300].any() and not (b - a)[330:].any()


def test_error_burst_rate():
    cfg = GeneratorConfig(duration_minutes=600, failures=(FailureScenario("error_log_burst", 0, 200, 60),))
    ds = generate_synthetic(cfg, 4)
    err = [e for e in ds.logs if e.raw_text.startswith("ERROR failed to connect")]
    minute = np.array([e.timestamp // 60 for e in err])
    inside = np.mean((minute >= 200) & (minute < 260)) * 600 / 60
    outside = np.mean((minute < 200) | (minute >= 260)) * 600 / 540
    assert inside >= 10 * outside


@given(st.sampled_from(FAILURE_TYPES), st.integers(0, 200), st.integers(1, 30), st.integers(0, 100))
@settings(max_examples=15, deadline=None)
def test_labels_cover_windows_with_perturbed_samples(kind, start, dur, seed):
    cfg = GeneratorConfig(duration_minutes=240, failures=(FailureScenario(kind, 0, start, dur),))
    ds = generate_synthetic(cfg, seed)
    (label,) = ds.labels
    assert label.start_ts == start * 60 and label.end_ts == (start + dur) * 60 - 1
    in_window = lambda ts: label.start_ts <= ts <= label.end_ts
    if kind in ("metric_surge", "metric_drop", "combined"):
        assert any(in_window(m.timestamp) for m in ds.metrics)
    if kind in ("error_log_burst", "combined"):
        assert any(in_window(e.timestamp) and e.raw_text.startswith("ERROR") for e in ds.logs)
    if kind in ("rt_spike", "combined"):
        assert any(in_window(s.start_ts // 1000) for s in ds.spans)


def test_generator_config_errors():
    with pytest.raises(ValueError):
        generate_synthetic(GeneratorConfig(duration_minutes=10, failures=(FailureScenario("rt_spike", 0, 8, 5),)), 0)
    with pytest.raises(ValueError):
        generate_synthetic(GeneratorConfig(topology=((),)), 0)
    with pytest.raises(ValueError):
        FailureScenario("meltdown", 0, 0, 1)
    with pytest.raises(ValueError):
        GeneratorConfig.from_dict({"durations": 5})


def test_generator_config_json_round_trip():
    cfg = GeneratorConfig(duration_minutes=90, failures=(FailureScenario("rt_spike", 0, 10, 5),),
                          topology=((0,),))
    assert GeneratorConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
