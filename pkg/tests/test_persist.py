import json
import math
import struct
from fractions import Fraction

import numpy as np
import pytest

from borderlrp.analysis import OffsetRow, StepRow
from borderlrp.network import forward, mini_c3d
from borderlrp.persist import (
    BadMagicError, DegenerateHeatmapError, ManifestError, TruncatedFileError, VersionMismatchError,
    dataset_config, heatmap_pixels, load_dataset, load_network, ppm_bytes, read_container,
    read_sweep_csv, render_heatmap, save_dataset, save_network, write_container, write_sweep_csv,
)
from borderlrp.relevance import AttributionMap
from borderlrp.synthlab import SynthConfig, generate_dataset


def test_network_round_trip_bitwise(tmp_path, rng):
    net = mini_c3d(seed=12)
    save_network(tmp_path / "n.vxtc", net)
    back = load_network(tmp_path / "n.vxtc")
    assert back.layers == net.layers and back.input_shape == net.input_shape
    for p, q in zip(net.params, back.params):
        assert (p is None) == (q is None)
        if p is not None:
            assert p.weight.tobytes() == q.weight.tobytes()
            assert (p.bias is None) == (q.bias is None)
    x = rng.random(net.input_shape)
    assert forward(net, x).logits.tobytes() == forward(back, x).logits.tobytes()


def test_bias_free_network_round_trip(tmp_path):
    net = mini_c3d(bias=False, seed=1)
    save_network(tmp_path / "n.vxtc", net)
    assert all(p is None or p.bias is None for p in load_network(tmp_path / "n.vxtc").params)


def test_dataset_round_trip(tmp_path):
    videos = generate_dataset(SynthConfig(frames=10, noise_std=0.1, seed=3), 8)
    save_dataset(tmp_path / "d.vxtc", videos, {"seed": 3})
    back = load_dataset(tmp_path / "d.vxtc")
    assert [v.id for v in back] == [v.id for v in videos]
    assert [v.true_class for v in back] == [v.true_class for v in videos]
    assert all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(videos, back))
    assert dataset_config(tmp_path / "d.vxtc") == {"seed": 3}


def test_same_content_same_bytes(tmp_path):
    net = mini_c3d(seed=2)
    save_network(tmp_path / "a", net)
    save_network(tmp_path / "b", net)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_container_layout(tmp_path):
    write_container(tmp_path / "c", [], {"x": np.array([1.5, -2.0])})
    blob = (tmp_path / "c").read_bytes()
    magic, version, mlen = struct.unpack_from("<4sIQ", blob)
    assert magic == b"VXTC" and version == 1
    manifest = json.loads(blob[16 : 16 + mlen])
    (entry,) = manifest["entries"]
    assert entry == {"name": "x", "kind": "tensor", "shape": [2], "dtype": "f64le", "offset": 0, "length": 16}
    assert blob[16 + mlen :] == struct.pack("<2d", 1.5, -2.0)


def corrupt(path, fn):
    path.write_bytes(fn(bytearray(path.read_bytes())))


@pytest.fixture
def net_file(tmp_path):
    path = tmp_path / "n.vxtc"
    save_network(path, mini_c3d(seed=0))
    return path


def test_bad_magic(net_file):
    corrupt(net_file, lambda b: b"XXXX" + b[4:])
    with pytest.raises(BadMagicError):
        load_network(net_file)


def test_version_mismatch(net_file):
    corrupt(net_file, lambda b: b[:4] + struct.pack("<I", 2) + b[8:])
    with pytest.raises(VersionMismatchError):
        load_network(net_file)


def test_manifest_beyond_end(net_file):
    corrupt(net_file, lambda b: b[:8] + struct.pack("<Q", len(b)) + b[16:])
    with pytest.raises(TruncatedFileError):
        load_network(net_file)


def test_truncated_payload(net_file):
    corrupt(net_file, lambda b: b[:-8])
    with pytest.raises(TruncatedFileError):
        load_network(net_file)


def test_garbled_manifest(net_file):
    corrupt(net_file, lambda b: b[:16] + b"#" + b[17:])
    with pytest.raises(ManifestError):
        load_network(net_file)


def _rewrite_manifest(path, edit):
    blob = path.read_bytes()
    _, _, mlen = struct.unpack_from("<4sIQ", blob)
    manifest = json.loads(blob[16 : 16 + mlen])
    edit(manifest["entries"])
    text = json.dumps(manifest).encode()
    path.write_bytes(struct.pack("<4sIQ", b"VXTC", 1, len(text)) + text + blob[16 + mlen :])


def test_length_shape_mismatch(tmp_path):
    path = tmp_path / "c"
    write_container(path, [], {"a": np.zeros(3), "b": np.zeros(2)})
    _rewrite_manifest(path, lambda es: es[0].update(shape=[4]))
    with pytest.raises(ManifestError):
        read_container(path)


def test_overlapping_entries(tmp_path):
    path = tmp_path / "c"
    write_container(path, [], {"a": np.zeros(3), "b": np.zeros(3)})
    _rewrite_manifest(path, lambda es: es[1].update(offset=8))
    with pytest.raises(ManifestError):
        read_container(path)


def test_missing_tensor_is_manifest_error(tmp_path, net_file):
    _rewrite_manifest(net_file, lambda es: es.pop())
    with pytest.raises(ManifestError):
        load_network(net_file)


def test_failed_write_leaves_old_file(tmp_path):
    path = tmp_path / "c"
    write_container(path, [], {"a": np.ones(2)})
    before = path.read_bytes()
    with pytest.raises(TypeError):
        write_container(path, [], {"a": object()})
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["c"]


# ---------------------------------------------------------------- CSV

def test_step_csv_round_trip(tmp_path, rng):
    rows = [StepRow(Fraction(1, 16), *rng.normal(size=5), 0.625, 1),
            StepRow(Fraction(32), math.nan, math.nan, math.nan, math.nan, math.nan, 0.0, 4)]
    write_sweep_csv(tmp_path / "s.csv", rows)
    back = read_sweep_csv(tmp_path / "s.csv")
    assert back[0] == rows[0]
    assert back[1].step == 32 and math.isnan(back[1].B) and back[1].excluded == 4
    text = (tmp_path / "s.csv").read_text()
    assert text.startswith("step,B,C,D,L,A,topk_acc,excluded\n1/16,")
    assert "\r" not in text


def test_offset_csv_round_trip(tmp_path, rng):
    rows = [OffsetRow(o, *rng.normal(size=5), 0) for o in (0, 8, 256)]
    write_sweep_csv(tmp_path / "o.csv", rows)
    assert read_sweep_csv(tmp_path / "o.csv") == rows
    assert (tmp_path / "o.csv").read_text().splitlines()[0] == "offset,L,A,B,C,D,excluded"


def test_csv_uses_seventeen_digits(tmp_path):
    write_sweep_csv(tmp_path / "o.csv", [OffsetRow(0, 0.1, 1 / 3, 0.0, -1e-20, 2.0, 0)])
    line = (tmp_path / "o.csv").read_text().splitlines()[1]
    assert line == "0,0.10000000000000001,0.33333333333333331,0,-9.9999999999999995e-21,2,0"


# ---------------------------------------------------------------- heatmaps

def test_ramp_endpoints():
    s = np.zeros((1, 2, 2, 2))
    s[0, 1, 0, 1] = 3.0
    rgb = heatmap_pixels(s)
    assert rgb[1, 0, 1].tolist() == [255, 0, 0]
    assert rgb[0, 0, 0].tolist() == [255, 255, 255]
    s[0, 0, 0, 0] = 1.5  # half of the snippet maximum
    assert heatmap_pixels(s)[0, 0, 0].tolist() == [255, 128, 128]


def test_uniform_map_is_uniform_and_red():
    rgb = heatmap_pixels(np.full((1, 3, 4, 5), 0.2))
    assert np.all(rgb == [255, 0, 0])


def test_normalization_is_snippet_global():
    s = np.zeros((1, 2, 1, 1))
    s[0, 0] = 1.0
    s[0, 1] = 4.0
    rgb = heatmap_pixels(s)
    assert rgb[0, 0, 0].tolist() == [255, 191, 191]  # round(255 * 0.75)


def test_ppm_header():
    data = ppm_bytes(np.zeros((3, 5, 3), dtype=np.uint8))
    assert data.startswith(b"P6\n5 3\n255\n")
    assert len(data) == len(b"P6\n5 3\n255\n") + 45


def test_render_is_byte_stable(tmp_path, rng):
    amap = AttributionMap(rng.random((1, 4, 6, 7)), "dtd", 0, 1.0)
    first = render_heatmap(amap, tmp_path / "a", "v")
    second = render_heatmap(amap, tmp_path / "b", "v")
    assert [p.name for p in first] == ["v_01.ppm", "v_02.ppm", "v_03.ppm", "v_04.ppm"]
    assert all(p.read_bytes() == q.read_bytes() for p, q in zip(first, second))
    assert first[0].read_bytes().startswith(b"P6\n7 6\n255\n")


def test_degenerate_heatmap(tmp_path):
    with pytest.raises(DegenerateHeatmapError):
        render_heatmap(np.zeros((1, 2, 3, 3)), tmp_path)
