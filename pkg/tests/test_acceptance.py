"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines are printed even
without ``-s``).
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import tastediv
from tastediv import divcore, geo, stats
from tastediv.divcore import DistanceMatrix, classical_mds, cosine_distance_matrix, diversity_batch, rao_stirling
from tastediv.ingest import ConsumptionMatrix, FilterPolicy, build_consumption_matrix, select_top_artists
from tastediv.synth import make_catalog, make_plays

DATA = Path(__file__).parent / "data"
FIXTURE = Path(tastediv.__file__).parent / "fixtures"


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def naive_rs(p, d):
    total = 0.0
    for i in range(len(p)):
        for j in range(len(p)):
            total += p[i] * p[j] * d[i][j]
    return total


def test_1_oracle_equivalence(capsys):
    rng = np.random.default_rng(1)
    cases = []
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        p = rng.dirichlet(np.ones(n))
        d = rng.random((n, n))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0.0)
        cases.append((p, d))
    t0 = time.perf_counter()
    got = [rao_stirling(p, d) for p, d in cases]
    elapsed = time.perf_counter() - t0
    worst = max(abs(g - naive_rs(p.tolist(), d.tolist())) for g, (p, d) in zip(got, cases))
    verdict(capsys, 1, worst <= 1e-12 and elapsed < 1.0, f"max error {worst:.2e}, {elapsed:.3f} s")


def test_2_disparity_sensitivity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    cats = ["metal a", "metal b", "metal c", "rare x", "rare y", "rare z"]
    n_users = 1000
    props = np.zeros((n_users, 6))
    for u in range(n_users):
        if u < 900:  # the metal trio is co-consumed by 90% of users
            props[u, :3] = rng.dirichlet(np.ones(3))
        elif u < 940:  # the rare trio together by 4%
            props[u, 3:] = rng.dirichlet(np.ones(3))
        else:  # the rest listen to one rare category next to one metal one
            props[u, 3 + u % 3] = 0.5
            props[u, u % 3] = 0.5
    cm = ConsumptionMatrix([f"u{i:04d}" for i in range(n_users)], cats, props)
    together = np.mean((props[:, 3:] > 0).all(axis=1))
    dist = cosine_distance_matrix(cm)
    probe = ConsumptionMatrix(["metalhead", "eclectic"], cats, [[1 / 3] * 3 + [0] * 3, [0] * 3 + [1 / 3] * 3])
    metal, eclectic = diversity_batch(probe, dist)
    elapsed = time.perf_counter() - t0
    ok = (
        together < 0.05
        and metal.rao_stirling < eclectic.rao_stirling
        and metal.entropy == eclectic.entropy
        and metal.volume == eclectic.volume
        and elapsed < 5.0
    )
    verdict(
        capsys, 2, ok,
        f"RS {metal.rao_stirling:.4f} < {eclectic.rao_stirling:.4f}, entropy and volume equal, {elapsed:.2f} s",
    )


def test_3_bounds(capsys):
    rng = np.random.default_rng(3)
    catalog = make_catalog(rng)
    plays = make_plays(rng, catalog, 300)
    selected, _ = select_top_artists(plays, FilterPolicy(), catalog)
    problems = []
    checked = 0
    for level in ("genre", "subgenre"):
        cm, _ = build_consumption_matrix(selected, catalog, level)
        reports = diversity_batch(cm, cosine_distance_matrix(cm))
        # add single-category users to exercise the zero case
        single = ConsumptionMatrix(["solo"], cm.categories, np.eye(len(cm.categories))[:1])
        reports += diversity_batch(single, cosine_distance_matrix(cm))
        rows = np.vstack([cm.proportions, single.proportions])
        for r, p in zip(reports, rows):
            checked += 1
            simpson = 1 - float(np.sum(p**2))
            if not (0 <= r.rao_stirling <= simpson + 1e-12 and simpson <= 1):
                problems.append((r.user_id, "rs bound"))
            if r.entropy > math.log(r.volume) + 1e-12:
                problems.append((r.user_id, "entropy bound"))
            if r.volume == 1 and (r.rao_stirling != 0 or r.entropy != 0):
                problems.append((r.user_id, "single category"))
    verdict(capsys, 3, not problems, f"{checked} users checked, {len(problems)} violations")


def _pairwise(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def test_4_mds_fidelity(capsys):
    tri = DistanceMatrix(["a", "b", "c"], np.ones((3, 3)) - np.eye(3))
    pos = np.array([0.0, 0.2, 0.5, 0.9])
    line = DistanceMatrix(list("abcd"), np.abs(pos[:, None] - pos[None, :]))
    errs = []
    for d in (tri, line):
        emb = classical_mds(d)
        errs.append(float(np.max(np.abs(_pairwise(emb.coords) - d.d))))
    second = float(classical_mds(line).eigenvalues[1])
    ok = max(errs) < 1e-6 and second < 1e-9
    verdict(capsys, 4, ok, f"max distance error {max(errs):.1e}, collinear second eigenvalue {second:.1e}")


def test_5_home_fixture(capsys, tmp_path):
    homes = geo.infer_homes(geo.parse_pings(DATA / "pings_12.csv"), geo.parse_zips(DATA / "zips.csv"))
    out = tmp_path / "homes.csv"
    geo.write_homes(out, homes)
    got = out.read_text().splitlines()
    want = (DATA / "expected_homes_12.csv").read_text().splitlines()
    reasons = sorted({h.reason for h in homes})
    mismatches = sum(g != w for g, w in zip(got, want)) + abs(len(got) - len(want))
    verdict(capsys, 5, mismatches == 0, f"{len(want) - 1} rows, {mismatches} mismatches, reasons {reasons}")


def test_6_regression_recovery(capsys):
    rng = np.random.default_rng(20150101)
    n = 200
    x = rng.normal(size=(n, 3))
    beta = np.array([1.5, -0.7, 0.3])
    y = 2.0 + x @ beta + rng.normal(0, 0.1, n)
    rep = stats.ols_regress(y, x, ["a", "b", "c"])
    worst = max(abs(p.coef - b) / p.se for p, b in zip(rep.predictors, beta))

    # centered two-level factorial: columns orthogonal to each other and to the intercept
    grid = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
    ortho = np.tile(grid, (5, 1))
    vif_orth = stats.vif(ortho)
    dup = np.column_stack([x[:, 0], x[:, 0], x[:, 1]])
    vif_dup = stats.vif(dup)
    ok = worst < 3.0 and np.all(np.abs(vif_orth - 1) <= 1e-9) and math.isinf(vif_dup[0]) and math.isinf(vif_dup[1])
    verdict(
        capsys, 6, ok,
        f"max |coef - true| = {worst:.2f} SE, orthogonal VIF {vif_orth.tolist()}, duplicate VIF {vif_dup[:2].tolist()}",
    )


def test_7_statistics_kernels(capsys):
    ib = stats.reg_incomplete_beta
    errs = []
    for a, b in [(0.5, 0.5), (1.0, 3.0), (2.5, 7.0), (30.0, 0.8)]:
        errs += [abs(ib(a, b, 0.0)), abs(ib(a, b, 1.0) - 1.0)]
        for x in (0.05, 0.3, 0.5, 0.77, 0.99):
            errs.append(abs(ib(a, b, x) - (1 - ib(b, a, 1 - x))))
    for x in np.linspace(0, 1, 21):
        errs.append(abs(ib(1.0, 1.0, float(x)) - x))
    beta_err = max(errs)

    rng = np.random.default_rng(11)
    rejections = sum(
        stats.one_way_anova([rng.normal(size=12) for _ in range(3)]).p < 0.05 for _ in range(1000)
    )
    rate = rejections / 1000

    r = rng.integers(0, 6, size=(1000, 3))
    kappa = stats.fleiss_kappa(stats.RatingSet([f"s{i}" for i in range(1000)], ["a", "b", "c"], r)).value
    ok = beta_err <= 1e-10 and abs(rate - 0.05) <= 0.02 and abs(kappa) < 0.05
    verdict(
        capsys, 7, ok,
        f"beta identity error {beta_err:.1e}, ANOVA null rejection {rate:.3f}, random-rater Fleiss {kappa:+.4f}",
    )


def test_8_hierarchy_robustness(capsys):
    rng = np.random.default_rng(8)
    catalog = make_catalog(rng, 600)
    plays = make_plays(rng, catalog, 400)
    selected, _ = select_top_artists(plays, FilterPolicy(), catalog)
    scores = {}
    for level in ("genre", "subgenre"):
        cm, _ = build_consumption_matrix(selected, catalog, level)
        scores[level] = {r.user_id: r.rao_stirling for r in diversity_batch(cm, cosine_distance_matrix(cm))}
    users = sorted(set(scores["genre"]) & set(scores["subgenre"]))
    r = stats.pearson([scores["genre"][u] for u in users], [scores["subgenre"][u] for u in users]).r
    verdict(capsys, 8, r > 0.5, f"genre vs subgenre Rao-Stirling r = {r:.3f} over {len(users)} users")


def test_9_end_to_end(capsys, tmp_path):
    outputs = []
    times = []
    for run in ("a", "b"):
        out = tmp_path / run
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "tastediv.cli", "--config", str(FIXTURE / "tastediv.cfg"), "--out", str(out), "all"],
            capture_output=True, text=True,
        )
        times.append(time.perf_counter() - t0)
        assert proc.returncode == 0, proc.stderr
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    identical = outputs[0] == outputs[1]
    ok = identical and max(times) < 10.0 and len(outputs[0]) >= 12
    verdict(capsys, 9, ok, f"exit 0, {len(outputs[0])} files, {max(times):.2f} s, identical rerun {identical}")
