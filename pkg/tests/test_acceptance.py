"""One test per acceptance criterion; each prints a PASS/FAIL line in the summary."""

import subprocess
import sys
import time
from fractions import Fraction

import numpy as np

from borderlrp import network as nw
from borderlrp import persist
from borderlrp.analysis import analyze_dataset, fit_linear, fit_quadratic, sweep_step
from borderlrp.network import forward, mini_c3d
from borderlrp.relevance import dtd_explain, explain, sensitivity_explain
from borderlrp.sampler import SnippetSpec, Video, extract_snippet, offset_schedule, step_schedule
from borderlrp.synthlab import SynthConfig, generate_dataset

import conftest
import toy_nets
from oracles import central_difference, graph_dtd

T16 = np.arange(1, 17, dtype=float)


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_conservation_on_bias_free_mini_c3d():
    net = mini_c3d(bias=False, seed=2024)
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for _ in range(100):
        amap = explain(net, rng.random(net.input_shape))
        if amap.explained_value > 0:
            worst = max(worst, abs(amap.total - amap.explained_value) / abs(amap.explained_value))
            checked += 1
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-6 and elapsed <= 60 and checked > 0,
           f"max relative leak {worst:.2e} over {checked} inputs (<= 1e-6), {elapsed:.1f} s (<= 60 s)")


def test_2_rule_oracles_on_toy_nets():
    worst = 0.0
    for build in toy_nets.ALL:
        net, x = build()
        rel, _, _ = graph_dtd(net, x, 0.0, 1.0)
        worst = max(worst, float(np.max(np.abs(dtd_explain(net, forward(net, x)).scores - rel))))
    record(2, worst <= 1e-10, f"max deviation {worst:.2e} across {len(toy_nets.ALL)} nets (<= 1e-10)")


def test_3_gradient_and_sensitivity():
    net = mini_c3d(seed=31)
    rng = np.random.default_rng(3)
    x = rng.random(net.input_shape)
    cls = int(np.argmax(forward(net, x).logits))
    g = nw.gradient(net, x, cls)
    f = lambda z: forward(net, z).logits[cls]
    worst, worst_small, off = 0.0, 0.0, 0
    for _ in range(20):
        idx = tuple(int(rng.integers(n)) for n in x.shape)
        fd = central_difference(f, x, idx, h=1e-3)
        scale = max(abs(g[idx]), abs(fd))
        err = 0.0 if scale == 0 else abs(fd - g[idx]) / scale
        worst = max(worst, err)
        off += err > 1e-3
        # diagnostic only: a step too small to cross a ReLU or max-pool switch
        fine = central_difference(f, x, idx, h=1e-6)
        worst_small = max(worst_small, abs(fine - g[idx]) / max(abs(g[idx]), 1e-300))
    amap = sensitivity_explain(net, x, cls)
    bitwise = amap.explained_value == float(np.sum(g**2)) and amap.total == float(np.sum(g**2))
    record(3, worst <= 1e-3 and bitwise,
           f"finite-difference (h=1e-3) relative error {worst:.2e} (<= 1e-3), {off}/20 coordinates over; "
           f"same coordinates at h=1e-6: {worst_small:.1e}; sum S == |grad|^2 bitwise: {bitwise}")


def test_4_fit_recovery_and_invariances():
    q = fit_quadratic(0.0010 * T16**2 - 0.0168 * T16 + 0.1085)
    lin = fit_linear(0.0007 * T16 + 0.0558)
    rec = max(abs(q.B - 0.0010), abs(q.C + 0.0168), abs(q.D - 0.1085), abs(lin.L - 0.0007), abs(lin.A - 0.0558))
    rng = np.random.default_rng(4)
    inv = 0.0
    for _ in range(50):
        p = rng.dirichlet(np.ones(16))
        c = rng.uniform(-0.5, 0.5)
        q0, l0 = fit_quadratic(p), fit_linear(p)
        qs, ls = fit_quadratic(p + c), fit_linear(p + c)
        qr, lr = fit_quadratic(p[::-1]), fit_linear(p[::-1])
        inv = max(inv, abs(qs.B - q0.B), abs(ls.L - l0.L), abs(qr.B - q0.B), abs(lr.L + l0.L))
    record(4, rec <= 1e-9 and inv <= 1e-12,
           f"coefficient recovery error {rec:.2e} (<= 1e-9), invariance error {inv:.2e} (<= 1e-12)")


def _window_ratio(mean_p):
    return float(np.mean(mean_p[14:16]) / np.mean(mean_p[:14]))


def test_5a_cue_locality(cue_task):
    start = time.perf_counter()
    data, net, _ = cue_task  # training happens in the session fixture
    s = analyze_dataset(net, data, SnippetSpec(), topk=1)
    elapsed = time.perf_counter() - start
    ratio = _window_ratio(s.mean_p)
    record("5a", s.accuracy >= 0.9 and ratio >= 2 and s.linear.L > 0 and elapsed <= 600,
           f"train top-1 {s.accuracy:.3f} (>= 0.9), share ratio frames 15-16 vs 1-14 {ratio:.2f} (>= 2), "
           f"L {s.linear.L:.5f} (> 0), excluded {s.excluded}")


def test_5b_trained_vs_untrained(cue_task):
    data, net, untrained = cue_task
    trained_p = analyze_dataset(net, data, SnippetSpec()).mean_p
    untrained_p = analyze_dataset(untrained, data, SnippetSpec()).mean_p
    delta = float(np.max(np.abs(trained_p - untrained_p)))
    record("5b", delta >= 0.02, f"max_t |dP_t| {delta:.4f} (>= 0.02)")


def test_5c_step_accuracy_sweep(motion_task):
    _, held_out, net = motion_task
    rows = sweep_step(net, held_out, schedule=[Fraction(1, 2), 1, 2, 4], topk=1)
    acc = [r.topk_acc for r in rows]
    spread = max(acc) - min(acc)
    unique = acc.count(max(acc)) == 1
    best = rows[acc.index(max(acc))].step
    record("5c", spread >= 0.02 and unique,
           f"top-1 accuracy by step {dict((str(r.step), round(r.topk_acc, 4)) for r in rows)}, "
           f"spread {spread:.3f} (>= 0.02), unique argmax step {best}: {unique}")


def test_6_sampler_exactness():
    n = 100
    frames = np.broadcast_to(np.arange(n, dtype=float)[None, :, None, None], (1, n, 1, 1))
    video = Video(frames, (0.0, float(n)))
    ids = lambda spec: extract_snippet(video, spec)[0, :, 0, 0].astype(int).tolist()
    ok = {
        "1/16 repetition": ids(SnippetSpec(5, Fraction(1, 16))) == [5] * 16,
        "identity": ids(SnippetSpec(0, 1)) == list(range(16)),
        "step 2 offset 8": ids(SnippetSpec(8, 2)) == list(range(8, 40, 2)),
        "step schedule": step_schedule() == [Fraction(2**i, 16) for i in range(10)],
        "offset schedule": offset_schedule() == list(range(0, 257, 8)),
    }
    record(6, all(ok.values()), ", ".join(f"{k}: {v}" for k, v in ok.items()))


def test_7_persistence(tmp_path):
    net = mini_c3d(seed=7)
    persist.save_network(tmp_path / "n.vxtc", net)
    back = persist.load_network(tmp_path / "n.vxtc")
    net_ok = all(
        (p is None and q is None)
        or (p.weight.tobytes() == q.weight.tobytes() and p.bias.tobytes() == q.bias.tobytes())
        for p, q in zip(net.params, back.params)
    ) and back.layers == net.layers
    videos = generate_dataset(SynthConfig(frames=20, noise_std=0.1, seed=1), 8)
    persist.save_dataset(tmp_path / "d.vxtc", videos)
    data_ok = all(a.frames.tobytes() == b.frames.tobytes() and a.id == b.id and a.true_class == b.true_class
                  for a, b in zip(videos, persist.load_dataset(tmp_path / "d.vxtc")))
    amap = explain(net, extract_snippet(videos[0], SnippetSpec()))
    a = persist.render_heatmap(amap, tmp_path / "a")
    b = persist.render_heatmap(amap, tmp_path / "b")
    same = all(p.read_bytes() == q.read_bytes() for p, q in zip(a, b)) and len(a) == 16
    header = all(p.read_bytes().startswith(b"P6\n24 24\n255\n") for p in a)
    record(7, net_ok and data_ok and same and header,
           f"network round-trip {net_ok}, dataset round-trip {data_ok}, "
           f"heatmaps byte-identical {same}, P6 header {header}")


def test_8_sweep_determinism_across_jobs(motion_task, tmp_path):
    _, held_out, net = motion_task
    persist.save_network(tmp_path / "n.vxtc", net)
    persist.save_dataset(tmp_path / "d.vxtc", held_out[:16])
    outputs = []
    for jobs in (1, 8):
        out = tmp_path / f"jobs{jobs}.csv"
        cmd = [sys.executable, "-m", "borderlrp", "sweep-step", "--net", str(tmp_path / "n.vxtc"),
               "--data", str(tmp_path / "d.vxtc"), "--jobs", str(jobs), "--out", str(out)]
        assert subprocess.run(cmd, capture_output=True).returncode == 0
        outputs.append(out.read_bytes())
    record(8, outputs[0] == outputs[1] and outputs[0].count(b"\n") == 11,
           f"sweep-step CSV with --jobs 1 and --jobs 8 byte-identical: {outputs[0] == outputs[1]}")


def test_9_runtime_budget():
    net = mini_c3d(seed=9)
    x = np.random.default_rng(9).random(net.input_shape)
    explain(net, x)  # warm-up
    start = time.perf_counter()
    explain(net, x)
    single = time.perf_counter() - start
    suite = time.perf_counter() - conftest.SESSION_START
    record(9, single <= 1.0 and suite <= 900,
           f"single 16x24x24 explanation {single * 1000:.0f} ms (<= 1 s), suite so far {suite:.0f} s (<= 900 s)")
