"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]`` or ``[FAIL]`` line with the measured
numbers before asserting, so a red criterion still reports what it saw.
Run with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import crandn, random_hermitian_psd
from disac.experiments import (_design_chain, load_spec, run_experiment, scenario_for,
                               write_outputs)
from disac.instance import build_instance
from disac.mc_eval import DetectionCurve, pd_crossing
from disac.optimizer import check_solution, optimize_beamformers, select_worst_case_aoa
from disac.rcs import RcsProfile, network_statistics, sample_rcs
from disac.robust_sinr import nominal_interference, worst_case_interference
from disac.scenario import RcsModelSpec, db2lin, desk_scale_config
from disac.sensing import expected_kld_monte_carlo, kld, lower_bound_objective

SPECS = Path(__file__).resolve().parents[1] / "specs"


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}")
        return ok

    return emit


# ---------------------------------------------------------------------------
# 1. closed-form worst-case interference against brute force


def _ball(rng, count, dim, radius):
    e = crandn(rng, count, dim)
    e /= np.linalg.norm(e, axis=-1, keepdims=True)
    return e * radius * rng.uniform(0, 1, (count, 1)) ** (1 / (2 * dim))


def _sampled_interference_max(rng, h_nodes, Wc, Ws, k, delta, noise, count):
    N, K, M = h_nodes.shape
    errs = np.stack([_ball(rng, count, M, delta) for _ in range(N)], axis=1)
    # a quarter of the samples sit on the sphere, pushed along the leading beam directions
    share = count // 4
    lead = np.linalg.eigh(Ws)[1][..., -1]
    phase = np.exp(1j * np.angle(np.einsum("ni,ni->n", h_nodes[:, k].conj(), lead)))
    d = lead[None] * phase[None, :, None] + 0.3 * crandn(rng, share, N, M)
    errs[:share] = delta * d / np.linalg.norm(d, axis=-1, keepdims=True)
    hn = h_nodes[None, :, k, :] + errs
    hs = hn.reshape(count, N * M)
    total = np.full(count, float(noise))
    for j in range(K):
        if j != k:
            total += np.real(np.sum(hs.conj() * (hs @ Wc[j].T), axis=1))
    total += np.real(np.einsum("sni,nij,snj->s", hn.conj(), Ws, hn))
    return total.max()


def test_c1_interference_bound(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    violations, worst_gap, worst_zero = 0, np.inf, 0.0
    N, K, M, S = 2, 2, 3, 100_000
    for i in range(1000):
        h_nodes = crandn(rng, N, K, M)
        h = np.transpose(h_nodes, (1, 0, 2)).reshape(K, N * M)
        rank = 1 + i % 3
        Wc = np.array([random_hermitian_psd(rng, N * M, rank) for _ in range(K)])
        Ws = np.array([random_hermitian_psd(rng, M, rank) for _ in range(N)])
        delta = (0.0, 0.01, 0.1)[i % 3]
        k = i % K
        others = np.delete(Wc, k, axis=0)
        closed = worst_case_interference(h[k], others, h_nodes[:, k], Ws, delta, 1.0)
        if delta == 0.0:
            nom = nominal_interference(h[k], others, h_nodes[:, k], Ws, 1.0)
            worst_zero = max(worst_zero, abs(closed - nom) / abs(nom))
            continue
        sampled = _sampled_interference_max(rng, h_nodes, Wc, Ws, k, delta, 1.0, S)
        violations += sampled > closed * (1 + 1e-12)
        worst_gap = min(worst_gap, (closed - sampled) / closed)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and worst_zero <= 1e-10 and elapsed < 120
    report(1, "worst-case interference bound", ok,
           f"violations={violations}, min relative slack={worst_gap:.2e}, "
           f"delta=0 mismatch={worst_zero:.1e}, {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 2. closed-form KLD against a sampling estimator


def _sampled_kld(rng, R0, R1, count):
    n = R0.shape[0]
    x = crandn(rng, count, n) @ np.linalg.cholesky(R1).T
    q1 = np.real(np.sum(x.conj() * np.linalg.solve(R1, x.T).T, axis=1))
    q0 = np.real(np.sum(x.conj() * np.linalg.solve(R0, x.T).T, axis=1))
    ld0 = np.linalg.slogdet(R0)[1]
    ld1 = np.linalg.slogdet(R1)[1]
    return float(np.mean(q0 - q1 + ld0 - ld1))


def test_c2_kld_closed_form(report):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        R0 = random_hermitian_psd(rng, 4) + 0.5 * np.eye(4)
        R1 = R0 + random_hermitian_psd(rng, 4, 2)
        exact = float(kld(R0, R1))
        worst = max(worst, abs(_sampled_kld(rng, R0, R1, 1_000_000) - exact) / exact)
    scalar = float(kld(np.array([[1.0]]), np.array([[2.0]])))
    scalar_err = abs(scalar - (1 - math.log(2)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.01 and scalar_err <= 1e-12 and elapsed < 60
    report(2, "closed-form KLD", ok,
           f"max relative error={worst:.2e} on 10 instances, scalar error={scalar_err:.1e}, "
           f"{elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. Jensen ordering


def test_c3_jensen_ordering(report):
    rng = np.random.default_rng(303)
    beyond, within = 0, 0
    for seed in range(50):
        inst = build_instance(desk_scale_config(seed=seed))
        cfg = inst.cfg
        Ws = np.array([random_hermitian_psd(rng, cfg.tx_antennas, 1 + seed % cfg.tx_antennas)
                       for _ in range(cfg.num_nodes)])
        Ws *= cfg.power_budget / np.real(np.trace(Ws, axis1=1, axis2=2)).sum()
        aoa = inst.estimated_aoa
        lb = lower_bound_objective(inst.R0, inst.expected_rs(Ws, aoa))
        mc = expected_kld_monte_carlo(inst.R0, inst.factors(aoa), inst.stats(aoa), Ws, 10_000,
                                      rng, cfg.rcs_model)
        sigma = mc.samples.std(ddof=1) / math.sqrt(mc.samples.size)
        if lb > mc.mean:
            within += lb <= mc.mean + 3 * sigma
            beyond += lb > mc.mean + 3 * sigma
    ok = beyond == 0
    report(3, "Jensen lower bound below sampled mean", ok,
           f"50 instances, violations within 3 sigma={within}, beyond 3 sigma={beyond}")
    assert ok


# ---------------------------------------------------------------------------
# 4. SCA behaviour


def test_c4_sca_behaviour(report):
    fast, mono_bad, slowest = 0, 0, 0.0
    iters = []
    for seed in range(20):
        inst = build_instance(desk_scale_config(seed=seed))
        sol = optimize_beamformers(inst)
        trace = np.asarray(sol.objective_trace)
        mono_bad += bool(np.any(np.diff(trace) < -1e-6))
        fast += sol.converged and sol.iterations <= 5
        iters.append(sol.iterations)
        slowest = max(slowest, max(sol.solve_times))
    ok = mono_bad == 0 and fast >= 18 and slowest < 5.0
    report(4, "SCA monotone and fast", ok,
           f"non-monotone traces={mono_bad}, converged within 5 iterations={fast}/20, "
           f"iterations={iters}, slowest solve={slowest:.2f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5, 6. threshold sweep designs, shared


@pytest.fixture(scope="module")
def tradeoff_designs():
    spec = load_spec(SPECS / "tradeoff.yaml")
    gammas = sorted((float(g) for g in spec.sweep["sinr_db"]), reverse=True)
    out = {}
    for variant in spec.sweep["variants"]:
        key = (variant["num_nodes"], variant["antennas"])
        for seed in spec.seeds:
            inst = build_instance(scenario_for(spec, seed, variant))
            aoa = select_worst_case_aoa(inst)
            out[key, seed] = (inst, _design_chain(inst, aoa, gammas))
    return out


def test_c5_feasibility(report, tradeoff_designs):
    checked, bad, missing = 0, [], []
    worst_power, worst_short = -np.inf, 0.0
    for (key, seed), (inst, designs) in tradeoff_designs.items():
        for gdb, (sol, _) in designs.items():
            if sol is None:
                missing.append((key, seed, gdb))
                continue
            chk = check_solution(inst, sol, sinr_threshold=db2lin(gdb))
            checked += 1
            worst_power = max(worst_power, chk.power_excess)
            worst_short = max(worst_short, chk.sinr_shortfall)
            if not chk.ok(1e-6, 1e-6):
                bad.append((key, seed, gdb))
    ok = not bad
    report(5, "returned designs are feasible", ok,
           f"{checked} designs checked, failing={bad}, max power excess={worst_power:.1e} W, "
           f"max relative SINR shortfall={worst_short:.1e}, no design (infeasible)={missing}")
    assert ok


def test_c6_benchmark_dominance(report, tradeoff_designs):
    losses, compared = [], 0
    for (key, seed), (_, designs) in tradeoff_designs.items():
        for gdb, (sol, zf) in designs.items():
            if not zf.feasible:
                continue
            compared += 1
            if sol is None or sol.objective < zf.objective:
                losses.append((key, seed, gdb))
    ok = not losses
    report("6a", "proposed KLD >= ZF KLD", ok,
           f"{compared} grid points compared, losses={losses}")
    assert ok


def test_c6_distributed_beats_colocated(report, tradeoff_designs):
    spec = load_spec(SPECS / "tradeoff.yaml")
    means, per_gamma = {}, {}
    for key in [(2, 4), (1, 8)]:
        vals = {}
        for seed in spec.seeds:
            for gdb, (sol, _) in tradeoff_designs[key, seed][1].items():
                vals.setdefault(gdb, []).append(sol.objective if sol else np.nan)
        per_gamma[key] = {g: float(np.nanmean(v)) for g, v in sorted(vals.items())}
        means[key] = float(np.nanmean([x for v in vals.values() for x in v]))
    ratio = means[2, 4] / means[1, 8] - 1
    ok = means[2, 4] > means[1, 8]
    detail = ", ".join(f"{g:g} dB: {per_gamma[2, 4][g]:.3g} vs {per_gamma[1, 8][g]:.3g}"
                       for g in per_gamma[2, 4])
    report("6b", "KLD(N=2, M=4) > KLD(N=1, M=8), seed-averaged", ok,
           f"mean {means[2, 4]:.4g} vs {means[1, 8]:.4g} ({100 * ratio:+.1f} %); {detail}")
    assert ok


# ---------------------------------------------------------------------------
# 7. detection orderings


def _aggregate(rows, **match):
    sel = [r for r in rows if all(r[k] == v for k, v in match.items())]
    grid = np.array(sorted({r["scnr_db"] for r in sel}))
    det = np.zeros(grid.size, dtype=int)
    trials = 0
    for r in sel:
        det[np.searchsorted(grid, r["scnr_db"])] += r["detections"]
    seeds = {r["seed"] for r in sel}
    trials = sel[0]["trials"] * len(seeds)
    return DetectionCurve(grid, det, trials)


def _isotonic_breaks(curve):
    lo, hi = curve.intervals()
    return sum(1 for i in range(curve.scnr_db.size) for j in range(i + 1, curve.scnr_db.size)
               if lo[i] > hi[j])


@pytest.fixture(scope="module")
def detection_runs():
    t0 = time.perf_counter()
    det = run_experiment(load_spec(SPECS / "detection.yaml"))
    modes = run_experiment(load_spec(SPECS / "power_modes.yaml"))
    return det.tables, modes.tables, time.perf_counter() - t0


def test_c7_monotone_and_threshold_order(report, detection_runs):
    det, modes, elapsed = detection_runs
    rows, mrows = det["detection"], modes["power_modes"]
    breaks = {}
    for d in sorted({r["delta"] for r in rows}):
        for g in sorted({r["gamma_db"] for r in rows}):
            for scheme in ("proposed", "zf"):
                c = _aggregate(rows, delta=d, gamma_db=g, scheme=scheme)
                breaks[d, g, scheme] = _isotonic_breaks(c)
    for m in ("TotalSystem", "PerNode", "PerAntenna"):
        breaks[m] = _isotonic_breaks(_aggregate(mrows, scheme=m))
    order_bad = []
    for d in sorted({r["delta"] for r in rows}):
        low = _aggregate(rows, delta=d, gamma_db=0.0, scheme="proposed")
        high = _aggregate(rows, delta=d, gamma_db=10.0, scheme="proposed")
        lo_hi, hi_lo = low.intervals()[1], high.intervals()[0]
        order_bad += [(d, s) for s, a, b in zip(low.scnr_db, lo_hi, hi_lo) if a < b]
    ok = sum(breaks.values()) == 0 and not order_bad and elapsed < 1200
    report("7a", "Pd monotone in SCNR; Pd(0 dB) >= Pd(10 dB) within CI", ok,
           f"isotonic breaks={sum(breaks.values())} over {len(breaks)} curves, "
           f"ordering breaks={order_bad}, detection suite {elapsed / 60:.1f} min")
    assert ok


def test_c7_proposed_vs_zf_gap(report, detection_runs):
    rows = detection_runs[0]["detection"]
    gaps = {}
    for d in sorted({r["delta"] for r in rows}):
        for g in sorted({r["gamma_db"] for r in rows}):
            p = _aggregate(rows, delta=d, gamma_db=g, scheme="proposed")
            z = _aggregate(rows, delta=d, gamma_db=g, scheme="zf")
            gaps[d, g] = pd_crossing(z.scnr_db, z.pd) - pd_crossing(p.scnr_db, p.pd)
    ok = all(v >= 1.5 for v in gaps.values())
    report("7b", "proposed-vs-ZF SCNR gap at Pd=0.5 >= 1.5 dB", ok,
           ", ".join(f"delta={d:g} gamma={g:g} dB: {v:.2f} dB" for (d, g), v in gaps.items()))
    assert ok


def test_c7_total_vs_per_node_gap(report, detection_runs):
    rows = detection_runs[1]["power_modes"]
    t = _aggregate(rows, scheme="TotalSystem")
    n = _aggregate(rows, scheme="PerNode")
    gap = pd_crossing(n.scnr_db, n.pd) - pd_crossing(t.scnr_db, t.pd)
    ok = gap >= 1.0
    report("7c", "TotalSystem-vs-PerNode SCNR gap at Pd=0.5 >= 1 dB", ok, f"gap={gap:.2f} dB")
    assert ok


def test_c7_per_node_matches_per_antenna(report, detection_runs):
    rows = detection_runs[1]["power_modes"]
    n = _aggregate(rows, scheme="PerNode")
    a = _aggregate(rows, scheme="PerAntenna")
    (nl, nh), (al, ah) = n.intervals(), a.intervals()
    apart = [float(s) for s, a0, a1, b0, b1 in zip(n.scnr_db, nl, nh, al, ah)
             if a1 < b0 or b1 < a0]
    ok = not apart
    report("7d", "PerNode and PerAntenna Pd within CI", ok,
           f"grid points with disjoint CIs={apart}, max |dPd|={np.max(np.abs(n.pd - a.pd)):.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 8. power-mode nesting


def test_c8_power_mode_nesting(report, detection_runs):
    kld_rows = detection_runs[1]["power_modes_kld"]
    by = {}
    for r in kld_rows:
        by.setdefault((r["seed"], r["gamma_db"]), {})[r["mode"]] = r["kld"]
    bad = [k for k, v in by.items()
           if not (v["TotalSystem"] >= v["PerNode"] >= v["PerAntenna"])]
    margins = [(v["TotalSystem"] - v["PerNode"], v["PerNode"] - v["PerAntenna"])
               for v in by.values()]
    ok = not bad
    report(8, "TotalSystem >= PerNode >= PerAntenna", ok,
           f"{len(by)} seeds, violations={bad}, min margins="
           f"{min(m[0] for m in margins):.3g}, {min(m[1] for m in margins):.3g}")
    assert ok


# ---------------------------------------------------------------------------
# 9. RCS statistics


def test_c9_rcs_statistics(report):
    rng = np.random.default_rng(909)
    worst = 0.0
    aoa = np.radians([10.0, 130.0, 250.0])
    for model in (RcsModelSpec("chi_square", 4.0), RcsModelSpec("swerling1")):
        stats = network_statistics(RcsProfile.default(model), aoa)
        draws = sample_rcs(stats, model, rng, 100_000)
        worst = max(worst, np.max(np.abs(draws.mean(0) / stats.mean - 1)),
                    np.max(np.abs(draws.var(0) / stats.variance - 1)))
    res = run_experiment(load_spec(SPECS / "rcs_models.yaml"))
    rows = res.tables["rcs_models"]
    width = {}
    for r in rows:
        width.setdefault((r["gamma_db"], r["model"]), []).append(r["band_width"])
    gammas = sorted({g for g, _ in width})
    order = {g: (np.mean(width[g, "swerling1"]), np.mean(width[g, "chi_square"])) for g in gammas}
    bad = [g for g, (s, c) in order.items() if not s > c]
    ok = worst <= 0.03 and not bad
    report(9, "RCS moments and band ordering", ok,
           f"max moment error={100 * worst:.2f} %, Swerling band not wider at {bad}; "
           + ", ".join(f"{g:g} dB: {s:.3g} vs {c:.3g}" for g, (s, c) in order.items()))
    assert ok


# ---------------------------------------------------------------------------
# 10. determinism


def test_c10_bit_identical_outputs(report, tmp_path):
    specs = {
        "tradeoff": "kind: tradeoff\nseeds: [3]\nsweep: {variants: [{num_nodes: 2}], "
                    "sinr_db: [0.0, 10.0, 20.0]}\n",
        "detection": "kind: detection\nseeds: [1]\nsweep: {sinr_db: [10.0], deltas: [0.01], "
                     "trials: 200}\n",
        "rcs": "kind: rcs_models\nseeds: [2]\nsweep: {sinr_db: [5.0], kld_draws: 200}\n",
        "polar": "kind: polar_pattern\nseeds: [0]\n",
    }
    diffs = []
    for name, text in specs.items():
        path = tmp_path / f"{name}.yaml"
        path.write_text(text)
        spec = load_spec(path)
        outs = []
        for rep in ("a", "b"):
            outs.append(write_outputs(spec, run_experiment(spec), tmp_path / name / rep,
                                      spec.seeds))
        for csv in sorted(outs[0].glob("*.csv")):
            if csv.read_bytes() != (outs[1] / csv.name).read_bytes():
                diffs.append(f"{name}/{csv.name}")
    ok = not diffs
    report(10, "identical spec and seed give identical CSVs", ok,
           f"{len(specs)} experiment kinds run twice, differing files={diffs}")
    assert ok
