"""Acceptance suite: one check per criterion, each with a wall-clock budget.

Every check records a ``PASS``/``FAIL`` line; the lines are printed in the
pytest terminal summary (see ``conftest.py``) and when this file is run as a
script.
"""

import contextlib
import gc
import math
import sys
import time

import numpy as np
import pytest

from oracles import brute_ap, brute_evaluate, optimal_match
from roadprior import anchors as an
from roadprior import dataset as ds
from roadprior import diffusion as dif
from roadprior import evaluation as ev
from roadprior import template_space as ts
from roadprior.cli import main as cli_main
from roadprior.geometry import CLASSES, chamfer_matrix

RESULTS = []

# Pinned after the first verified run over seeds 0..4 (observed ratio
# 2.94-3.09, gap 3.9-4.1 m); see the project notes for the probe.
SUPERIORITY_RATIO = 2.5
SUPERIORITY_GAP_M = 3.0


@contextlib.contextmanager
def criterion(number, name, budget_s):
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        dt = time.perf_counter() - t0
        RESULTS.append(f"FAIL [{number}] {name}: {type(exc).__name__}: {exc} ({dt:.2f} s)")
        raise
    dt = time.perf_counter() - t0
    detail = info.get("detail", "")
    if dt >= budget_s:
        RESULTS.append(f"FAIL [{number}] {name}: {dt:.2f} s exceeds {budget_s} s budget {detail}")
        pytest.fail(f"criterion {number} took {dt:.2f} s (budget {budget_s} s)")
    RESULTS.append(f"PASS [{number}] {name}: {detail} ({dt:.2f} s < {budget_s} s)")


def elements_at_least(count, seed):
    n = 0
    frames = 0
    while n < count:
        frames += 20
        recs = ds.generate_synthetic(ds.SynthConfig(n_frames=frames, seed=seed))
        n = sum(len(r.elements) for r in recs)
    return ds.all_elements(recs)[:count]


def test_svd_error_identity():
    with criterion(1, "SVD error identity on 500 elements", 5) as info:
        elems = elements_at_least(500, seed=21)
        matrix = ts.ElementMatrix.from_elements(elems)
        space = ts.fit(matrix, 20)
        err = ts.reconstruction_error(space, matrix)
        tail = float(np.sum(space.singular_values[20:] ** 2))
        rel = abs(err - tail) / tail
        info["detail"] = f"relative gap {rel:.2e} <= 1e-8"
        assert matrix.L == 500 and rel <= 1e-8


def test_clustering_equivalence():
    with criterion(2, "coefficient vs reconstruction K-means labels, 200 elements", 5) as info:
        elems = elements_at_least(200, seed=22)
        matrix = ts.ElementMatrix.from_elements(elems)
        space = ts.fit(matrix, 20)
        coeffs = space.project(matrix.data.T)
        recon = space.reconstruct(coeffs)
        cfg = an.ClusterConfig(n_anchors=12, seed=4)
        a = an.kmeans(coeffs, 12, cfg)
        b = an.kmeans(recon, 12, cfg)
        info["detail"] = f"{a.iterations}/{b.iterations} iterations, labels identical"
        assert coeffs.shape == (200, 20) and recon.shape == (200, 40)
        assert np.array_equal(a.labels, b.labels)


def mean_nearest_chamfer(points, anchor_vectors):
    d = chamfer_matrix(points, anchor_vectors.reshape(len(anchor_vectors), -1, 2))
    return float(d.min(axis=1).mean())


def test_anchor_superiority():
    with criterion(3, "clustered anchors beat random anchors on held-out GT, 5 seeds", 30) as info:
        rows = []
        for s in range(5):
            train = ds.generate_synthetic(ds.SynthConfig(n_frames=150, seed=s))
            held = ds.all_elements(ds.generate_synthetic(ds.SynthConfig(n_frames=100, seed=1000 + s)))
            assert len(held) >= 500
            pts = np.stack([e.points for e in held])
            matrix = ts.ElementMatrix.from_records(train)
            space = ts.fit(matrix, 20)
            clustered = an.select_prior_anchors(matrix, space, an.ClusterConfig(n_anchors=50, seed=s))
            baseline = an.random_anchor_baseline(50, space, seed=s)
            c = mean_nearest_chamfer(pts, clustered.anchors)
            r = mean_nearest_chamfer(pts, baseline.anchors)
            rows.append((c, r))
        info["detail"] = "; ".join(f"{c:.2f} vs {r:.2f} m" for c, r in rows)
        for c, r in rows:
            assert r / c >= SUPERIORITY_RATIO and r - c >= SUPERIORITY_GAP_M


def test_diffusion_marginal_consistency():
    with criterion(4, "composed steps vs one-shot marginal over 1e5 trials", 60) as info:
        sch = dif.NoiseSchedule.linear()
        worst_ab = max(
            abs(sch.alpha_bar(i) - math.prod(1 - b for b in sch.betas[:i])) for i in range(1, sch.T + 1)
        )
        assert worst_ab <= 1e-12
        n, i = 100_000, 30
        r0 = np.linspace(-1.0, 1.0, 40)
        rng = np.random.default_rng(2024)
        composed = np.tile(r0, (n, 1))
        for s in range(1, i + 1):
            composed = dif.forward_step(sch, composed, s, rng)
        shot = dif.forward_marginal(sch, np.tile(r0, (n, 1)), i, rng)
        ab = sch.alpha_bar(i)
        sd = math.sqrt(1 - ab)
        tol = 3 * sd / math.sqrt(n)
        mean_gap = max(np.max(np.abs(x.mean(axis=0) - math.sqrt(ab) * r0)) for x in (composed, shot))
        var_gap = max(np.max(np.abs(x.var(axis=0) / (1 - ab) - 1)) for x in (composed, shot))
        info["detail"] = (
            f"mean gap {mean_gap:.2e} <= {tol:.2e}, variance gap {100 * var_gap:.2f}% <= 2%, "
            f"alpha_bar gap {worst_ab:.1e}"
        )
        assert mean_gap <= tol and var_gap <= 0.02


@contextlib.contextmanager
def gc_paused():
    # like timeit: keep collector pauses out of the measurements
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def costly_denoiser(n_ref=100, seed=0):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(-15, 15, size=(n_ref, 40))

    def denoise(noisy, step, conditioning):
        nearest = np.argmin(chamfer_matrix(noisy, ref), axis=1)
        return np.ones((len(noisy), 3)) / 3, ref[nearest]

    return denoise


def test_loop_cost_linearity():
    with criterion(5, "per-step loop cost increments agree within 20%", 60) as info:
        sch = dif.NoiseSchedule.linear()
        anchors = an.random_anchor_baseline(100, ts.TemplateSpace(np.eye(40)[:, :1], np.ones(1)))
        den = costly_denoiser()

        def once(steps):
            t0 = time.perf_counter()
            dif.truncated_denoise_loop(sch, anchors, den, steps=steps, seed=1)
            return time.perf_counter() - t0

        once(1)  # warm up
        # interleave the step counts so drift hits all three alike, and take
        # each round's own increments so slow load changes cancel in pairs
        with gc_paused():
            runs = np.array([[once(s) for s in (1, 2, 3)] for _ in range(25)])
        d2, d3 = np.median(np.diff(runs, axis=1), axis=0)
        spread = abs(d3 - d2) / min(d2, d3)
        info["detail"] = f"increments {1e3 * d2:.1f} and {1e3 * d3:.1f} ms, spread {100 * spread:.1f}%"
        assert spread <= 0.2


def mixed_fixture():
    frames = ds.generate_synthetic(ds.SynthConfig(n_frames=10, seed=3))
    rng = np.random.default_rng(0)
    preds = []
    for rec in frames:
        for e in rec.elements:
            if rng.random() < 0.15:
                continue
            sigma = rng.choice([0.05, 0.3, 0.8, 2.0])
            pts = e.points + rng.normal(0, sigma, e.points.shape)
            el = ds.RoadElement(e.cls, pts, e.is_closed, e.id + "p")
            preds.append(ev.Prediction(el, float(np.round(rng.random(), 2)), rec.frame_id))
        for k in range(int(rng.integers(0, 3))):
            c = CLASSES[int(rng.integers(3))]
            el = ds.RoadElement(c, rng.uniform(-14, 14, (20, 2)), c.closed, f"clutter{k}")
            preds.append(ev.Prediction(el, float(rng.random()), rec.frame_id))
    return frames, preds


def test_evaluator_oracle_equivalence():
    with criterion(6, "evaluate() vs brute-force optimal-assignment evaluator", 5) as info:
        frames, preds = mixed_fixture()
        report = ev.evaluate(preds, frames)
        p = [(x.frame_id, x.element.cls, x.element.points, x.confidence) for x in preds]
        g = [(r.frame_id, e.cls, e.points) for r in frames for e in r.elements]
        want_ap, want_flags = brute_evaluate(p, g, ev.DEFAULT_THRESHOLDS, CLASSES, optimal_match)
        worst = 0.0
        for c in CLASSES:
            for t in ev.DEFAULT_THRESHOLDS:
                got = [m.tp for m in report.matches if m.cls is c and m.threshold == t]
                assert got == want_flags[c, t]
                worst = max(worst, abs(report.ap[c, t] - want_ap[c, t]))
        assert worst <= 1e-12
        hand = ev.average_precision([True, False, True], [0.9, 0.8, 0.7], 2)
        assert hand == 5 / 6 or abs(hand - 5 / 6) <= 1e-15
        assert brute_ap([True, False, True], [0.9, 0.8, 0.7], 2) == pytest.approx(5 / 6, abs=1e-15)
        info["detail"] = f"{len(preds)} predictions, flags identical, max AP gap {worst:.1e}, AP(hand)={hand:.12f}"


def test_threshold_monotonicity():
    with criterion(7, "oracle-denoiser AP nondecreasing over 0.2/0.5/1.0/1.5", 30) as info:
        train = ds.generate_synthetic(ds.SynthConfig(n_frames=150, seed=7))
        held = ds.generate_synthetic(ds.SynthConfig(n_frames=40, seed=1007))
        matrix = ts.ElementMatrix.from_records(train)
        space = ts.fit(matrix, 20)
        aset = an.select_prior_anchors(matrix, space, an.ClusterConfig(n_anchors=50, seed=7))
        den = dif.oracle_denoiser(aset)
        sch = dif.NoiseSchedule.linear()
        preds = []
        for fi, rec in enumerate(held):
            scores, out = dif.truncated_denoise_loop(sch, aset, den, rec.frame_id, steps=2, seed=fi)
            for k, (s, v) in enumerate(zip(scores, out)):
                cls = CLASSES[int(np.argmax(s))]
                el = ds.RoadElement.from_vector(cls, v, id=f"{rec.frame_id}/{k}")
                preds.append(ev.Prediction(el, float(np.max(s)), rec.frame_id))
        taus = (0.2, 0.5, 1.0, 1.5)
        report = ev.evaluate(preds, held, taus)
        table = {c.value: [report.ap[c, t] for t in taus] for c in CLASSES}
        info["detail"] = ", ".join(f"{k}: " + "/".join(f"{100 * v:.2f}" for v in vals) for k, vals in table.items())
        for vals in table.values():
            assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert any(vals[-1] > 0 for vals in table.values())


def run_cli_pipeline(d):
    d.mkdir(parents=True, exist_ok=True)
    steps = [
        ["synth", "--out", d / "data.jsonl", "--seed", 5, "--n-frames", 60],
        ["build-templates", "--dataset", d / "data.jsonl", "--out", d / "tpl.json", "--plot", d / "tpl.svg"],
        ["cluster-anchors", "--templates", d / "tpl.json", "--dataset", d / "data.jsonl",
         "--seed", 5, "--out", d / "anchors.json", "--plot", d / "anchors.svg"],
        ["diffuse", "--anchors", d / "anchors.json", "--frames", d / "data.jsonl", "--sigma-seed", 5,
         "--out", d / "pred.jsonl", "--plot", d / "pred.svg"],
        ["evaluate", "--pred", d / "pred.jsonl", "--gt", d / "data.jsonl", "--report", d / "report.json"],
    ]
    for argv in steps:
        assert cli_main([str(a) for a in argv]) == 0, argv
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_end_to_end_determinism(tmp_path, capsys):
    with criterion(8, "CLI pipeline twice gives byte-identical artifacts", 60) as info:
        a = run_cli_pipeline(tmp_path / "a")
        b = run_cli_pipeline(tmp_path / "b")
        capsys.readouterr()
        assert a.keys() == b.keys() and len(a) == 8
        same = [k for k in a if a[k] == b[k]]
        info["detail"] = f"{len(same)}/{len(a)} artifacts identical"
        assert len(same) == len(a)


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
