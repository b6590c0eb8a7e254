"""Acceptance suite: one test per headline criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that is printed in the terminal summary.
"""

import time

import numpy as np
import pytest
from scipy.stats import binomtest

from conftest import ACCEPTANCE_LINES, random_beams, random_scenario, scalar_pair
from ibcsim.algorithms import AlgorithmParams, Mode, run
from ibcsim.bench import CampaignConfig, csv_text, run_campaign
from ibcsim.model import all_mse, all_sinr, mmse_receivers
from ibcsim.runtime import run_decentralized
from ibcsim.scenario import ScenarioConfig, drop_seed, generate_scenario, with_seed

QOS_POINTS = (0.5, 1.5, 2.5)
DROPS = 50
POWER_RATIOS = []


def report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def campaign():
    cfg = CampaignConfig(qos_sweep=(0.0,) + QOS_POINTS, drops=DROPS, base_seed=1)
    start = time.perf_counter()
    records = run_campaign(cfg)
    POWER_RATIOS.extend(r.max_power_ratio for r in records)
    return records, time.perf_counter() - start


def select(records, qos, mode):
    out = sorted((r for r in records if r.qos == qos and r.algorithm is mode), key=lambda r: r.drop)
    assert len(out) == DROPS
    return out


def unsat_mean(metrics):
    bad = metrics.degradation[metrics.degradation > 0]
    return bad.mean() if bad.size else 0.0


def pooled_unsat(records):
    deg = np.concatenate([r.metrics.degradation for r in records])
    bad = deg[deg > 0]
    return bad.mean() if bad.size else 0.0


def test_zero_qos_reduction(campaign):
    records, elapsed = campaign
    sums = {m: [r.metrics.sum_rate for r in select(records, 0.0, m)] for m in Mode}
    ref = sums[Mode.WMMSE]
    ok = all(sums[m] == ref for m in Mode)
    # the shared campaign covers four sweep points; a quarter of it is the qos=0 point
    report("zero-QoS reduction", ok and elapsed / 4 < 60,
           f"{DROPS} drops, identical per-drop sum rates={ok}, ~{elapsed / 4:.1f}s")


@pytest.mark.parametrize("other", [Mode.WMMSE, Mode.QOS_HARD])
def test_degradation_ordering(campaign, other):
    records, elapsed = campaign
    parts, ok = [], elapsed < 120
    for q in QOS_POINTS:
        mine = [unsat_mean(r.metrics) for r in select(records, q, Mode.PROPOSED)]
        theirs = [unsat_mean(r.metrics) for r in select(records, q, other)]
        wins = sum(a < b for a, b in zip(mine, theirs))
        losses = sum(a > b for a, b in zip(mine, theirs))
        p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
        pooled_p = pooled_unsat(select(records, q, Mode.PROPOSED))
        pooled_o = pooled_unsat(select(records, q, other))
        ok &= p < 0.05 and pooled_p < pooled_o
        parts.append(f"q={q}: {pooled_p:.3f} vs {pooled_o:.3f}, {wins}/{wins + losses} wins, p={p:.3g}")
    report(f"degradation ordering vs {other.value}", ok, "; ".join(parts))


def test_sum_rate_sacrifice_bounded(campaign):
    records, _ = campaign
    parts, ok = [], True
    for q in (0.0,) + QOS_POINTS:
        prop = np.mean([r.metrics.sum_rate for r in select(records, q, Mode.PROPOSED)])
        base = np.mean([r.metrics.sum_rate for r in select(records, q, Mode.WMMSE)])
        ok &= prop >= 0.85 * base
        parts.append(f"q={q}: {prop / base:.3f}")
    report("sum-rate sacrifice (>= 85% of WMMSE)", ok, ", ".join(parts))


def test_deactivation_trend(campaign):
    records, _ = campaign
    frac = {}
    for m in (Mode.PROPOSED, Mode.QOS_HARD):
        rates = np.concatenate([r.metrics.rates for r in select(records, 0.5, m)])
        frac[m] = float(np.mean(rates < 1e-3))
    ok = frac[Mode.PROPOSED] <= frac[Mode.QOS_HARD]
    report("deactivation trend at q=0.5", ok,
           f"PROPOSED {frac[Mode.PROPOSED]:.3f} vs QOS_HARD {frac[Mode.QOS_HARD]:.3f}")


def test_wmmse_monotone():
    cfg = ScenarioConfig.desk_scale()
    worst = np.inf
    for i in range(100):
        sc = generate_scenario(with_seed(cfg, drop_seed(77, i)))
        res = run(sc, AlgorithmParams(mode=Mode.WMMSE))
        POWER_RATIOS.append(float(np.max(res.power_history / sc.power_budget)))
        h = res.objective_history
        worst = min(worst, float(np.min(np.diff(h) / np.abs(h[:-1]))))
    report("WMMSE monotone objective", worst >= -1e-9,
           f"100 instances, worst relative step {worst:.3g}")


def test_mmse_identity():
    worst, n, seed = 0.0, 0, 0
    while n < 1000:
        sc = random_scenario(seed, num_tx=3, rx_per_tx=2, tx_antennas=4, rx_antennas=2,
                             streams=1 + seed % 2)
        beams = random_beams(sc, seed + 10_000)
        beams.rx = mmse_receivers(sc.channels, beams)
        e = all_mse(sc.channels, beams)
        ref = 1.0 / (1.0 + all_sinr(sc.channels, beams))
        worst = max(worst, float(np.max(np.abs(e - ref) / ref)))
        n += e.size
        seed += 1
    report("MMSE identity", worst <= 1e-9, f"{n} streams, worst relative error {worst:.3g}")


def test_decentralized_equivalence():
    cfg = ScenarioConfig.desk_scale()
    params = AlgorithmParams(mode=Mode.PROPOSED, qos=1.5)
    start, worst = time.perf_counter(), 0.0
    for i in range(20):
        sc = generate_scenario(with_seed(cfg, drop_seed(5, i)))
        dec, _ = run_decentralized(sc, params, pilot_noise_var=0.0)
        cen = run(sc, params)
        POWER_RATIOS.append(float(np.max(dec.power_history / sc.power_budget)))
        worst = max(worst, float(np.max(np.abs(dec.rates - cen.rates))))
    elapsed = time.perf_counter() - start
    report("centralized/decentralized equivalence", worst <= 1e-6 and elapsed < 60,
           f"20 drops, max rate gap {worst:.3g}, {elapsed:.1f}s")


def test_small_instance_optimality():
    # RX 0 alone reaches exactly 1 bit/s/Hz, so qos = 1 cannot hold for both links
    sc = scalar_pair(1.0, 1.4, 0.5, 0.5, noise=1.0, power=1.0)
    qos, rho = 1.0, 4.0
    g = np.abs(sc.channels.H[:, :, 0, 0]) ** 2
    p = np.linspace(0.0, 1.0, 100)
    p0, p1 = np.meshgrid(p, p, indexing="ij")
    r0 = np.log2(1 + p0 * g[0, 0] / (p1 * g[1, 0] + 1.0))
    r1 = np.log2(1 + p1 * g[1, 1] / (p0 * g[0, 1] + 1.0))
    assert not np.any((r0 >= qos) & (r1 >= qos))
    grid = r0 + r1 - rho * (np.clip(qos - r0, 0, qos) + np.clip(qos - r1, 0, qos))
    best = float(grid.max())
    res = run(sc, AlgorithmParams(mode=Mode.PROPOSED, qos=qos, penalty_slope=rho))
    POWER_RATIOS.append(float(np.max(res.power_history / sc.power_budget)))
    gap = abs(res.penalized_objective - best) / abs(best)
    report("small-instance optimality", gap <= 0.02,
           f"objective {res.penalized_objective:.4f} vs grid {best:.4f} ({grid.size} points), gap {gap:.2%}")


def test_determinism():
    cfg = CampaignConfig(qos_sweep=(0.0, 1.5), drops=4, base_seed=123)
    serial = csv_text(run_campaign(cfg, workers=1))
    parallel = csv_text(run_campaign(cfg, workers=3))
    report("determinism (1 vs 3 workers)", serial == parallel,
           f"{len(serial.splitlines()) - 1} rows, byte-identical={serial == parallel}")


def test_power_feasibility(campaign):
    # runs last: collects the ratios of every acceptance run above
    worst = max(POWER_RATIOS)
    report("power feasibility", worst <= 1 + 1e-6,
           f"{len(POWER_RATIOS)} runs, max P/P_b over all iterations {worst:.9f}")
