"""Desk-scale trend calibration: runs the acceptance comparisons over a
seed batch and prints per-seed medians, wins, and sign-test p-values.

Usage: python3 scripts/calibrate_trends.py [n_seeds] [window] [depth]
"""

import math
import statistics
import sys
import time

sys.path.insert(0, "src")

from dapes.config import ScenarioConfig
from dapes.scheduling import ExchangeMode
from dapes.sim import run_world

N_SEEDS = int(sys.argv[1]) if len(sys.argv) > 1 else 5
WINDOW = float(sys.argv[2]) if len(sys.argv) > 2 else 0.050
DEPTH = int(sys.argv[3]) if len(sys.argv) > 3 else 4
RANGES = [50.0, 75.0, 100.0, 125.0]
BASE_RANGE = 75.0


def base_config():
    cfg = ScenarioConfig()
    cfg.peer.window = WINDOW
    cfg.peer.fwd_jitter_max = WINDOW
    cfg.peer.pipeline_depth = DEPTH
    cfg.medium.range = BASE_RANGE
    cfg.run.max_sim_time = 600
    return cfg


def run_case(cfg, seed):
    w = run_world(cfg, seed)
    times = [w.metrics.download_times.get(n, cfg.run.max_sim_time)
             for n in w.downloader_ids]
    return statistics.median(times), w.metrics.total_tx, w.metrics.collisions


def sign_test_p(wins, n):
    """One-sided binomial P(X >= wins) under p=1/2."""
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n


def compare(label, mutate_a, mutate_b, metric=0, ranges=(BASE_RANGE,)):
    wins = ties = 0
    pairs = []
    for r in ranges:
        for seed in range(1, N_SEEDS + 1):
            ca = base_config(); mutate_a(ca); ca.medium.range = r
            cb = base_config(); mutate_b(cb); cb.medium.range = r
            va = run_case(ca, seed)[metric]
            vb = run_case(cb, seed)[metric]
            pairs.append((va, vb))
            if va < vb:
                wins += 1
            elif va == vb:
                ties += 1
    n = len(pairs) - ties
    p = sign_test_p(wins, n) if n else 1.0
    med_a = statistics.median(p_[0] for p_ in pairs)
    med_b = statistics.median(p_[1] for p_ in pairs)
    print("%-34s A=%9.1f B=%9.1f wins %2d/%2d p=%.4f" %
          (label, med_a, med_b, wins, n, p))
    return wins, n, p


def main():
    t0 = time.time()
    noop = lambda c: None

    compare("C10 local < encounter (time)", noop,
            lambda c: setattr(c.peer, "strategy", "encounter"))

    compare("C11 randstart < lowest (time)", noop,
            lambda c: setattr(c.peer, "random_start", False))

    compare("C12 peba < linear (tx @100,125)",
            noop, lambda c: setattr(c.peer, "peba", False),
            metric=1, ranges=(100.0, 125.0))

    def all_bitmaps_first(c):
        c.peer.exchange_mode = ExchangeMode.BITMAPS_FIRST
        c.peer.bitmaps = None
    compare("C13 interleaved3 < bf-all (time)", noop, all_bitmaps_first)

    print("C14 forward_prob sweep:")
    for prob in (0.0, 0.2, 0.4, 0.6):
        meds_t = []
        meds_x = []
        for seed in range(1, N_SEEDS + 1):
            c = base_config()
            c.peer.forward_prob = prob
            t, tx, _ = run_case(c, seed)
            meds_t.append(t)
            meds_x.append(tx)
        print("  prob %.1f  med time %8.1f  med tx %8d" %
              (prob, statistics.median(meds_t), statistics.median(meds_x)))

    print("range sweep (baseline):")
    for r in RANGES:
        meds = []
        for seed in range(1, N_SEEDS + 1):
            c = base_config(); c.medium.range = r
            meds.append(run_case(c, seed)[0])
        print("  range %5.0f  med time %8.1f" % (r, statistics.median(meds)))

    print("total wall: %.0fs" % (time.time() - t0))


if __name__ == "__main__":
    main()
