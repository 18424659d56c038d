import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowrom import dataio
from flowrom.numerics import svd
from flowrom.pod import SnapshotMatrix

GOLDEN = Path(__file__).parent / "golden"


def _centered_sigma(snap):
    d = snap.data - snap.data.mean(axis=1, keepdims=True)
    return svd(d)[1]


def test_flowsnap_round_trip_bit_exact(tmp_path):
    data = np.random.default_rng(0).normal(size=(100, 20))
    m = SnapshotMatrix(data, (10, 10))
    dataio.write_snapshots(m, tmp_path / "a.flowsnap")
    back = dataio.read_snapshots(tmp_path / "a.flowsnap")
    assert back.data.tobytes() == data.tobytes() and back.grid == (10, 10)
    raw = (tmp_path / "a.flowsnap").read_bytes()
    assert raw[:8] == b"FLOWSNP1" and struct.unpack_from("<4Q", raw, 8) == (100, 20, 10, 10)
    # column-major: the second value on disk is node 1 of snapshot 0
    assert struct.unpack_from("<d", raw, 40 + 8)[0] == data[1, 0]


def test_flowsnap_errors_report_byte_offsets(tmp_path):
    p = tmp_path / "x.flowsnap"
    dataio.write_snapshots(SnapshotMatrix(np.ones((3, 4))), p)
    good = p.read_bytes()
    p.write_bytes(b"NOTSNAP!" + good[8:])
    with pytest.raises(dataio.SnapFormatError, match="FLOWSNP1.*|offset 0"):
        dataio.read_snapshots(p)
    p.write_bytes(good[:-5])
    with pytest.raises(dataio.SnapFormatError, match="byte offset"):
        dataio.read_snapshots(p)
    p.write_bytes(good[:20])
    with pytest.raises(dataio.SnapFormatError, match="header"):
        dataio.read_snapshots(p)
    p.write_bytes(good + b"\0")
    with pytest.raises(dataio.SnapFormatError, match="trailing"):
        dataio.read_snapshots(p)
    p.write_bytes(struct.pack("<8s4Q", b"FLOWSNP1", 2**40, 2**30, 0, 0))
    with pytest.raises(dataio.SnapFormatError, match="overflow"):
        dataio.read_snapshots(p)
    p.write_bytes(struct.pack("<8s4Q", b"FLOWSNP1", 3, 0, 0, 0))
    with pytest.raises(dataio.SnapFormatError):
        dataio.read_snapshots(p)


def test_csv_snapshot_ingestion(tmp_path):
    m = SnapshotMatrix(np.random.default_rng(1).normal(size=(5, 3)))
    dataio.write_snapshots_csv(m, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text()
    assert text.splitlines()[0] == "1,2,3" and "\r" not in text
    back = dataio.load_snapshots(tmp_path / "s.csv")
    assert back.data.tobytes() == m.data.tobytes()


def test_synth_rank_one_mode():
    snap = dataio.synth_wake(dataio.SynthWakeSpec(modes=1, steps=40))
    s = _centered_sigma(snap)
    assert s[2] / s[0] < 1e-10 and s[1] / s[0] > 1e-3


def test_synth_rank_five_modes():
    s = _centered_sigma(dataio.synth_wake(dataio.SynthWakeSpec(modes=5, steps=60)))
    assert s[10] / s[0] < 1e-10 and s[9] / s[0] > 1e-8


def test_synth_static_field_has_zero_rank():
    snap = dataio.synth_wake(dataio.SynthWakeSpec(modes=3, speed=0.0, steps=10))
    assert np.max(np.abs(snap.data - snap.data.mean(axis=1, keepdims=True))) < 1e-15


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_synth_rank_bound_and_determinism(modes, seed):
    spec = dataio.SynthWakeSpec(nx=16, ny=8, modes=modes, steps=30, seed=seed)
    a, b = dataio.synth_wake(spec), dataio.synth_wake(spec)
    assert a.data.tobytes() == b.data.tobytes()
    s = _centered_sigma(a)
    assert s[2 * modes] / s[0] < 1e-10


def test_synth_decay_converges_to_base_flow():
    snap = dataio.synth_wake(dataio.SynthWakeSpec(decay=3.0, steps=110))
    assert np.max(np.abs(snap.data[:, -1] - 1.0)) < 1e-6
    assert np.max(np.abs(snap.data[:, 0] - 1.0)) > 0.1


def test_synth_spec_validation(tmp_path):
    for bad in (dict(modes=0), dict(nx=3), dict(dt=0.0), dict(modes=2, amplitudes=(1.0,))):
        with pytest.raises(dataio.ConfigError):
            dataio.SynthWakeSpec(**bad)
    p = tmp_path / "w.cfg"
    p.write_text("# wake\nmodes = 3\namplitudes = 0.1, 0.2, 0.3\ndecay=1.5\n")
    spec = dataio.load_synth_spec(p)
    assert spec.modes == 3 and spec.amplitudes == (0.1, 0.2, 0.3) and spec.decay == 1.5
    p.write_text("colour=red\n")
    with pytest.raises(dataio.ConfigError, match="colour"):
        dataio.load_synth_spec(p)


def _case(tmp_path, **over):
    dataio.write_snapshots(SnapshotMatrix(np.ones((4, 3))), tmp_path / "d.flowsnap")
    kv = {"case_name": "naca0012", "mach": "0.2", "aoa": "0", "reynolds": "5e6",
          "variables": "density", "snapshots": "d.flowsnap"}
    kv.update(over)
    p = tmp_path / "case.cfg"
    p.write_text("".join(f"{k}={v}\n" for k, v in kv.items() if v is not None))
    return p


def test_case_config_low_speed_row(tmp_path):
    cfg = dataio.load_case_config(_case(tmp_path))
    assert (cfg.mach, cfg.aoa, cfg.reynolds) == (0.2, 0.0, 5e6)
    assert cfg.datasets() == [("density", tmp_path / "d.flowsnap")]
    assert cfg.context("density").mach == 0.2
    assert dataio.load_case_config(_case(tmp_path, aoa="8")).aoa == 8.0


@pytest.mark.parametrize(
    "over, match",
    [
        (dict(reynolds="0"), "reynolds"),
        (dict(mach="-1"), "mach"),
        (dict(mach=None), "missing required key 'mach'"),
        (dict(flavour="x"), "unknown key 'flavour'"),
        (dict(snapshots="nope.flowsnap"), "does not exist"),
        (dict(variables="density,pressure"), "2 variables"),
    ],
)
def test_case_config_rejections(tmp_path, over, match):
    with pytest.raises(dataio.ConfigError, match=match):
        dataio.load_case_config(_case(tmp_path, **over))


def test_key_value_parsing_errors():
    with pytest.raises(dataio.ConfigError, match="2"):
        dataio.parse_key_values("a=1\nbroken\n")
    with pytest.raises(dataio.ConfigError, match="duplicate"):
        dataio.parse_key_values("a=1\na=2\n")


def test_csv_export_rows_equal_steps(tmp_path):
    per_step = np.array([0.5, 0.25, 0.125])
    dataio.export_csv(per_step, tmp_path / "r.csv", first_step=10)
    text = (tmp_path / "r.csv").read_bytes().decode()
    assert text == "step,rmse\n10,0.5\n11,0.25\n12,0.125\n"
    dataio.write_loss_csv([1.0, 0.5], tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines() == ["epoch,mean_loss", "1,1.0", "2,0.5"]


def test_zero_field_heatmap(tmp_path):
    side = dataio.export_heatmap(np.zeros(12), (4, 3), tmp_path / "z.ppm")
    assert side.read_text() == "min=0.0\nmax=0.0\n"
    lines = (tmp_path / "z.ppm").read_text().splitlines()
    assert lines[:3] == ["P3", "4 3", "255"]
    assert len({ln for ln in lines[3:]}) == 1 and len(lines) == 6
    with pytest.raises(ValueError, match="grid"):
        dataio.export_heatmap(np.zeros(12), None, tmp_path / "y.ppm")


def test_heatmap_golden_bytes(tmp_path):
    snap = dataio.synth_wake(dataio.SynthWakeSpec(nx=6, ny=4, modes=2, steps=3, seed=0))
    dataio.export_heatmap(snap.data[:, 1], snap.grid, tmp_path / "h.ppm")
    assert (tmp_path / "h.ppm").read_bytes() == (GOLDEN / "heatmap_6x4.ppm").read_bytes()
    assert (tmp_path / "h.ppm.txt").read_bytes() == (GOLDEN / "heatmap_6x4.ppm.txt").read_bytes()


def test_color_ramp_endpoints():
    ramp = dataio.color_ramp()
    assert ramp.shape == (256, 3) and ramp.dtype == np.uint8
    assert tuple(ramp[0]) == (0, 0, 255) and tuple(ramp[-1]) == (255, 0, 0)
