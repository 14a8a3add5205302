"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The lines are also collected and repeated in the terminal summary.
"""
import json
import time

import numpy as np
import pytest

from _oracles import euclid_beam_pair_integral
from gbfbi import cli
from gbfbi.beam import gaussian_beam, l2_norm, residual_norm, riccati_solve
from gbfbi.fbi import SINGULAR, SMOOTH, TAU_GRID, phase_audit, probe_build, transform
from gbfbi.functions import make_test_function
from gbfbi.geodesic import jacobi_scan, shoot, su_check
from gbfbi.manifold import ChartMetric, covector_norm, unit_covector
from gbfbi.pairing import pair_map, pair_map_pt, sample_neighborhood

pytestmark = pytest.mark.slow
REPORT = []
BUMP_METRIC = {"family": "conformal-bump", "amplitude": 0.2, "center": [0.3, 0.2], "width": 0.5}


def report(n, ok, detail, elapsed=None, budget=None):
    timing = "" if elapsed is None else f" [{elapsed:.1f}s / {budget:.0f}s]"
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}{timing}"
    print(line)
    REPORT.append(line)
    return ok


def _scan(tmp_path_factory, name, cfg):
    out = tmp_path_factory.mktemp(name)
    path = out / "cfg.json"
    path.write_text(json.dumps(cfg))
    t0 = time.perf_counter()
    status = cli.main(["wf-scan", "--config", str(path), "--out", str(out / "run")])
    elapsed = time.perf_counter() - t0
    rows = (out / "run" / "wf_scan.csv").read_text().splitlines()
    head = rows[0].split(",")
    recs = [dict(zip(head, r.split(","))) for r in rows[1:]]
    return {"status": status, "elapsed": elapsed, "records": recs, "csv": out / "run" / "wf_scan.csv", "cfg": path}


def _jump_cfg(metric):
    cfg = json.loads(cli.example_config().read_text())
    cfg["metric"] = metric
    return cfg


@pytest.fixture(scope="module")
def euclid_jump(tmp_path_factory):
    return _scan(tmp_path_factory, "ej", _jump_cfg({"family": "euclidean"}))


@pytest.fixture(scope="module")
def euclid_gauss(tmp_path_factory):
    cfg = _jump_cfg({"family": "euclidean"})
    cfg["function"] = {"kind": "gaussian", "center": [0.0, 0.0], "sigma": 0.5}
    return _scan(tmp_path_factory, "eg", cfg)


@pytest.fixture(scope="module")
def bump_jump(tmp_path_factory):
    return _scan(tmp_path_factory, "bj", _jump_cfg(BUMP_METRIC))


# ---------------------------------------------------------------------------

def test_pair_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, worst_b = 0.0, 0.0
    for spec in ({"family": "euclidean"}, BUMP_METRIC):
        chart = ChartMetric.from_spec(spec, 1.0)
        z0 = np.zeros(2)
        probe = probe_build(chart, z0, unit_covector(chart, z0, 0.3))
        pf = probe.field
        for z, xi in sample_neighborhood(pf, 500, rng):
            w1, w2 = pair_map(pf, z, xi)
            unit = xi / covector_norm(chart, z, xi)
            worst = max(worst, float(covector_norm(chart, z, w1 + w2 - pf.t0 * unit)))
            if spec["family"] == "euclidean":
                v1, v2 = pair_map_pt(pf, z, xi)
                worst_b = max(worst_b, float(np.abs(np.concatenate([w1 - v1, w2 - v2])).max()))
    el = time.perf_counter() - t0
    ok = worst <= 1e-10 and worst_b <= 1e-9 and el < 10
    assert report(1, ok, f"max |w1+w2-t0 xi| = {worst:.2e}, backend diff = {worst_b:.2e}", el, 10)


def test_riccati_positivity_and_closed_forms(euclid, bump):
    t0 = time.perf_counter()
    t = np.linspace(-3, 3, 601)
    free = float(np.max(np.abs(riccati_solve(0.0, -3, 3).H_at(t) - (t + 1j) / (1 + t * t))))
    H0 = 0.4 + 0.8j
    ref = (-np.sin(t) + H0 * np.cos(t)) / (np.cos(t) + H0 * np.sin(t))
    sph = float(np.max(np.abs(riccati_solve(-1.0, -3, 3, H0=H0).H_at(t) - ref)))
    im_min = np.inf
    for chart in (euclid, bump):
        for ang, z in ((0.0, np.zeros(2)), (2.0, np.array([0.3, -0.2])), (4.0, np.array([-0.2, 0.4]))):
            b = gaussian_beam(chart, z, unit_covector(chart, z, ang), order=1)
            tt = np.linspace(b.line.lo, b.line.hi, 400)
            im_min = min(im_min, float(b.H(tt).imag.min()))
    el = time.perf_counter() - t0
    ok = im_min > 0 and free <= 1e-8 and sph <= 1e-8 and el < 5
    assert report(2, ok, f"min Im H = {im_min:.3e}, F=0 err = {free:.1e}, F=-1 err = {sph:.1e}", el, 5)


def test_quasimode_residual_slopes(euclid):
    t0 = time.perf_counter()
    z = np.array([0.1, -0.2])
    xi = unit_covector(euclid, z, 0.7)
    taus = np.array(TAU_GRID, float)
    fits, band = {}, 0.0
    for order in (0, 1):
        beam = gaussian_beam(euclid, z, xi, order=order)
        res = [residual_norm(beam, complex(t)).value for t in taus]
        l2 = [l2_norm(beam, complex(t)).value for t in taus]
        A = np.vstack([np.log(taus), np.ones_like(taus)]).T
        coef, ss, *_ = np.linalg.lstsq(A, np.log(res), rcond=None)
        r2 = 1 - ss[0] / np.sum((np.log(res) - np.mean(np.log(res))) ** 2)
        fits[order] = (coef[0], r2)
        band = max(band, max(l2) / min(l2))
    el = time.perf_counter() - t0
    (s0, r0), (s1, r1) = fits[0], fits[1]
    ok = s1 <= s0 - 1 and min(r0, r1) >= 0.98 and band <= 3 and el < 300
    assert report(3, ok, f"slope N=0 {s0:.3f} (R2 {r0:.4f}), N=1 {s1:.3f} (R2 {r1:.4f}), "
                         f"L2 band {band:.3f}", el, 300)


def test_phase_conditions():
    t0 = time.perf_counter()
    n, fails, worst = 0, 0, {"diag": 0.0, "grad": 0.0, "hess": np.inf, "im": np.inf, "hom": 0.0}
    for spec in ({"family": "euclidean"}, BUMP_METRIC):
        chart = ChartMetric.from_spec(spec, 1.0)
        z0 = np.array([0.05, 0.0])
        probe = probe_build(chart, z0, unit_covector(chart, z0, 0.2))
        for z, xi in sample_neighborhood(probe.field, 6, np.random.default_rng(1), frac=0.5):
            probe.entry(z, xi)
        for e in list(probe.entries.values()):
            a = phase_audit(probe, e)
            n += 1
            fails += not a.passed
            worst = {"diag": max(worst["diag"], abs(a.diag_value)), "grad": max(worst["grad"], a.grad_defect),
                     "hess": min(worst["hess"], a.hess_min), "im": min(worst["im"], a.im_min),
                     "hom": max(worst["hom"], a.homogeneity_defect)}
    el = time.perf_counter() - t0
    ok = (fails == 0 and worst["diag"] <= 1e-8 and worst["grad"] <= 1e-6 and worst["hess"] >= 0.1
          and worst["im"] >= -1e-9 and worst["hom"] <= 1e-9 and el < 60)
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    assert report(4, ok, f"{n} cached covectors, {fails} failing; {detail}", el, 60)


def test_detection_separation(euclid, euclid_jump, euclid_gauss):
    t0 = time.perf_counter()
    # oracle: pipeline at order 0 against brute-force closed-form free beams
    f_jump = make_test_function({"kind": "half-plane-jump", "point": [0, 0], "normal": [1, 0]})
    f_gauss = make_test_function({"kind": "gaussian", "center": [0, 0], "sigma": 0.5})
    # the error must sit inside the transform's own noise estimate
    worst, rel = 0.0, 0.0
    z = np.zeros(2)
    for ang in (0.0, np.pi / 4):
        probe = probe_build(euclid, z, unit_covector(euclid, z, ang), order=0)
        cases = [(f_jump, tau, 0.0) for tau in (25.0, 50.0)] + [(f_gauss, 25.0, -1.0)]
        for f, tau, lo in cases:
            got = transform(probe, f, tau)
            ref = euclid_beam_pair_integral(f, tau, ang, x1_lo=lo)
            err = abs(got.value - ref)
            worst = max(worst, err / max(got.noise, 1e-6 * abs(ref)))
            rel = max(rel, err / abs(ref))
    recs = euclid_jump["records"]
    conormal = float(recs[0]["slope"])
    rotated = float(recs[2]["slope"])            # 16 directions: index 2 is 45 degrees
    g_classes = [r["classification"] for r in euclid_gauss["records"]]
    el = time.perf_counter() - t0 + euclid_jump["elapsed"] + euclid_gauss["elapsed"]
    ok = (conormal - rotated >= 3 and all(c == SMOOTH for c in g_classes) and worst <= 1.0
          and euclid_jump["status"] == 0 and euclid_gauss["status"] == 0 and el < 900)
    assert report(5, ok, f"jump slopes conormal {conormal:.2f} vs 45deg {rotated:.2f}; gaussian "
                         f"{g_classes.count(SMOOTH)}/16 SMOOTH; oracle err/noise {worst:.2f} (rel {rel:.1e})", el, 900)


def test_example_config_classification(euclid_jump):
    classes = [r["classification"] for r in euclid_jump["records"]]
    assert len(classes) == 16 and classes.count(SINGULAR) == 2
    assert classes[0] == classes[8] == SINGULAR


def test_detection_on_curved_metric(euclid_jump, bump_jump):
    e = [r["classification"] for r in euclid_jump["records"]]
    b = [r["classification"] for r in bump_jump["records"]]
    el = bump_jump["elapsed"]
    ok = e == b and bump_jump["status"] == 0 and el < 1200
    pattern = "".join("S" if c == SINGULAR else "." for c in b)
    assert report(6, ok, f"bump pattern {pattern} (S = SINGULAR), matches euclidean: {e == b}", el, 1200)


def test_su_checker(euclid, sphere_cap):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    r = 0.9 * np.sqrt(rng.uniform(size=20))
    a = rng.uniform(0, 2 * np.pi, 20)
    passed = 0
    for z in np.stack([r * np.cos(a), r * np.sin(a)], 1):
        for k in range(16):
            passed += su_check(euclid, z, unit_covector(euclid, z, 2 * np.pi * k / 16)).passed
    z = np.array([1.9, 0.0])
    v = su_check(sphere_cap, z, unit_covector(sphere_cap, z, np.pi / 2), n_dir=1)
    near = min((abs(abs(t) - np.pi) for t in v.conjugate_times), default=np.inf)
    el = time.perf_counter() - t0
    ok = passed == 320 and not v.passed and "conjugate-point" in v.reasons and near <= 1e-4 and el < 120
    assert report(7, ok, f"euclidean {passed}/320 pass; K=1 cap reasons {v.reasons}, "
                         f"|t_conj - pi| = {near:.1e}", el, 120)


def test_conjugate_closed_forms():
    t0 = time.perf_counter()
    worst, count_ok = 0.0, True
    for K, R in ((1.0, 4.0), (4.0, 2.0)):
        chart = ChartMetric("constant-curvature", R, K=K)
        z = np.array([-0.9 * R, 0.0])
        p = shoot(chart, z, unit_covector(chart, z, 0.0))
        roots = jacobi_scan(p)
        expect = [k * np.pi / np.sqrt(K) for k in range(1, 5) if k * np.pi / np.sqrt(K) < p.t_out]
        count_ok &= len(roots) == len(expect) and len(expect) > 0
        if len(roots) == len(expect):
            worst = max([worst] + [abs(a - b) for a, b in zip(roots, expect)])
    chart = ChartMetric("constant-curvature", 1.5, K=-1.0)
    z = np.array([-1.2, 0.3])
    p = shoot(chart, z, unit_covector(chart, z, 0.2))
    t = np.linspace(-p.t_in, p.t_out, 60)
    sinh_err = float(np.max(np.abs(p.state(t)[:, 4] - np.sinh(t))))
    count_ok &= jacobi_scan(p) == []
    el = time.perf_counter() - t0
    ok = count_ok and worst <= 1e-6 and sinh_err <= 1e-6 and el < 10
    assert report(8, ok, f"sin root err {worst:.1e}, sinh Jacobi err {sinh_err:.1e}", el, 10)


def test_determinism(tmp_path, euclid_jump):
    small = {"schema_version": 1, "metric": BUMP_METRIC, "seed": 7,
             "function": {"kind": "cone", "center": [0.0, 0.0], "alpha": 1.0},
             "su": {"n_z": 3, "n_eta": 4}, "pair": {"samples": 30, "admissibility_samples": 2},
             "beam": {"orders": [0, 1], "taus": [25, 50, 100]}, "phase": {"samples": 2}}
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(small))
    same = True
    for sub in ("su-audit", "pair-audit", "beam-residual", "phase-audit"):
        stem = sub.replace("-", "_")
        a, b = tmp_path / f"{stem}_a", tmp_path / f"{stem}_b"
        assert cli.main([sub, "--config", str(cfg), "--out", str(a)]) == 0
        assert cli.main([sub, "--config", str(cfg), "--out", str(b)]) == 0
        same &= (a / f"{stem}.csv").read_bytes() == (b / f"{stem}.csv").read_bytes()
    again = tmp_path / "wf"
    assert cli.main(["wf-scan", "--config", str(euclid_jump["cfg"]), "--out", str(again)]) == 0
    same &= (again / "wf_scan.csv").read_bytes() == euclid_jump["csv"].read_bytes()
    assert report(9, same, "repeated runs give byte-identical CSVs for all five subcommands")
