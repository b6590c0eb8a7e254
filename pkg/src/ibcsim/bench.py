"""Monte-Carlo campaigns over random drops, QoS targets and algorithms.

Every drop is generated once from ``drop_seed(base_seed, index)`` and shared
by all algorithms and QoS points, so comparisons are paired.  Drops run in
worker processes; results are keyed by drop index, which keeps the output
independent of the number of workers.
"""

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .algorithms import SAT_TOL, AlgorithmParams, Mode, NumericalError, is_deactivated, run
from .metrics import (DropMetrics, average_degradation_unsatisfied,
                      deactivated_fraction, drop_metrics, empirical_cdf)
from .model import ModelError
from .runtime import run_decentralized
from .scenario import ConfigError, ScenarioConfig, drop_seed, generate_scenario, with_seed

__all__ = ["Engine", "CampaignConfig", "DropRecord", "run_campaign", "run_drop",
           "write_results", "summarize", "CSV_HEADER", "main"]

log = logging.getLogger(__name__)

CSV_HEADER = ["drop", "seed", "algorithm", "qos", "user", "rate_bps_hz", "degradation",
              "satisfied", "deactivated", "iterations", "converged"]


class Engine(str, Enum):
    CENTRALIZED = "CENTRALIZED"
    DECENTRALIZED = "DECENTRALIZED"


@dataclass(frozen=True)
class CampaignConfig:
    """A full sweep.  ``solver`` holds :class:`AlgorithmParams` overrides
    (everything except ``mode`` and ``qos``)."""
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig.desk_scale)
    algorithms: Tuple[Mode, ...] = (Mode.WMMSE, Mode.QOS_HARD, Mode.PROPOSED)
    qos_sweep: Tuple[float, ...] = (0.0, 0.5, 1.5, 2.5)
    drops: int = 50
    base_seed: int = 0
    engine: Engine = Engine.CENTRALIZED
    pilot_noise_var: float = 0.0
    out_dir: str = "results"
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(Mode(a) for a in self.algorithms))
        object.__setattr__(self, "qos_sweep", tuple(float(q) for q in self.qos_sweep))
        object.__setattr__(self, "engine", Engine(self.engine))
        if int(self.drops) < 1:
            raise ConfigError("drops must be at least 1")
        if not self.qos_sweep:
            raise ConfigError("qos_sweep must not be empty")
        if not self.algorithms:
            raise ConfigError("select at least one algorithm")
        if any(q < 0 for q in self.qos_sweep):
            raise ConfigError("QoS targets must be nonnegative")
        if self.pilot_noise_var < 0:
            raise ConfigError("pilot_noise_var must be nonnegative")
        bad = set(self.solver) - (set(AlgorithmParams.__dataclass_fields__) - {"mode", "qos"})
        if bad:
            raise ConfigError(f"unknown solver settings: {sorted(bad)}")

    @classmethod
    def preset(cls, name, **overrides):
        """``desk`` (3 TX, 50 drops) or ``paper`` (10 TX, 8x4 antennas, 400 drops)."""
        if name == "desk":
            return cls(**overrides)
        if name == "paper":
            return cls(scenario=ScenarioConfig(), drops=400, **overrides)
        raise ConfigError(f"unknown preset {name!r}")

    def params(self, mode, qos):
        return AlgorithmParams(mode=mode, qos=qos, **self.solver)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "scenario" in d:
            d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            try:
                return cls.from_dict(json.load(f))
            except TypeError as exc:
                raise ConfigError(str(exc)) from None


@dataclass(frozen=True, eq=False)
class DropRecord:
    drop: int
    qos: float
    algorithm: Mode
    metrics: DropMetrics
    iterations: int
    converged: bool
    max_power_ratio: float
    objective_history: np.ndarray
    deactivation_eps: float = 1e-3


def run_drop(config: CampaignConfig, index: int) -> List[DropRecord]:
    """All (qos, algorithm) runs on drop ``index``."""
    seed = drop_seed(config.base_seed, index)
    scenario = generate_scenario(with_seed(config.scenario, seed))
    out = []
    for qos in config.qos_sweep:
        for mode in config.algorithms:
            params = config.params(mode, qos)
            if config.engine is Engine.DECENTRALIZED:
                result, _ = run_decentralized(scenario, params, config.pilot_noise_var, seed=seed)
            else:
                result = run(scenario, params)
            ratio = float(np.max(result.power_history / scenario.power_budget)) if result.power_history.size else 0.0
            out.append(DropRecord(index, qos, mode,
                                  drop_metrics(result, mode.value, seed, params.deactivation_eps),
                                  result.iterations_used, result.converged, ratio,
                                  result.objective_history, params.deactivation_eps))
    return out


def _run_drop_args(args):
    return run_drop(*args)


def run_campaign(config: CampaignConfig, workers: int = 1, progress=None) -> List[DropRecord]:
    """Run every drop; records come back ordered by (qos, algorithm, drop).

    ``progress`` is called as ``progress(done, total)`` after each drop.
    """
    total = int(config.drops)
    by_drop = {}
    if workers <= 1:
        for i in range(total):
            by_drop[i] = run_drop(config, i)
            if progress:
                progress(len(by_drop), total)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, recs in zip(range(total), pool.map(_run_drop_args, [(config, i) for i in range(total)])):
                by_drop[i] = recs
                if progress:
                    progress(len(by_drop), total)
    qi = {q: n for n, q in enumerate(config.qos_sweep)}
    ai = {a: n for n, a in enumerate(config.algorithms)}
    records = [r for i in sorted(by_drop) for r in by_drop[i]]
    return sorted(records, key=lambda r: (qi[r.qos], ai[r.algorithm], r.drop))


def summarize(records: List[DropRecord], deactivation_eps=1e-3) -> List[dict]:
    """Aggregates per (algorithm, qos), in first-seen order."""
    groups = {}
    for r in records:
        groups.setdefault((r.algorithm.value, r.qos), []).append(r.metrics)
    out = []
    for (alg, qos), drops in groups.items():
        unsat = np.concatenate([d.degradation for d in drops])
        unsat = unsat[unsat > 0]
        support, values = empirical_cdf(unsat) if unsat.size else (np.array([]), np.array([]))
        out.append({
            "algorithm": alg,
            "qos": qos,
            "drops": len(drops),
            "avg_degradation_unsatisfied": average_degradation_unsatisfied(drops),
            "deactivated_fraction": deactivated_fraction(drops, deactivation_eps),
            "mean_sum_rate": float(np.mean([d.sum_rate for d in drops])),
            "cdf": {"support": support.tolist(), "values": values.tolist()},
        })
    return out


def csv_text(records: List[DropRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        m = r.metrics
        for u, (rate, deg) in enumerate(zip(m.rates, m.degradation)):
            w.writerow([r.drop, m.seed, m.algorithm, repr(r.qos), u, repr(float(rate)),
                        repr(float(deg)), int(rate >= r.qos - SAT_TOL),
                        int(is_deactivated(rate, r.deactivation_eps)), r.iterations, int(r.converged)])
    return buf.getvalue()


def write_results(records: List[DropRecord], out_dir, deactivation_eps=1e-3):
    """Write ``links.csv`` and ``summary.json`` into ``out_dir``; return both paths."""
    if not records:
        raise ValueError("no results to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, summary_path = out / "links.csv", out / "summary.json"
    csv_path.write_text(csv_text(records))
    summary_path.write_text(json.dumps(summarize(records, deactivation_eps), indent=2) + "\n")
    return csv_path, summary_path


def _parser():
    p = argparse.ArgumentParser(prog="ibcsim-bench",
                                description="Monte-Carlo QoS campaign over random IBC drops.")
    p.add_argument("--config", help="JSON campaign configuration")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--algorithm", action="append", choices=[m.value for m in Mode],
                   help="repeat to select several (default: all)")
    p.add_argument("--qos", help="comma-separated QoS targets in bits/s/Hz")
    p.add_argument("--drops", type=int)
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--engine", choices=[e.value for e in Engine])
    p.add_argument("--pilot-noise-var", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int, default=1)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        config = CampaignConfig.from_json(args.config) if args.config else CampaignConfig.preset(args.preset)
        overrides = {}
        if args.algorithm:
            overrides["algorithms"] = tuple(args.algorithm)
        if args.qos:
            overrides["qos_sweep"] = tuple(float(q) for q in args.qos.split(","))
        if args.drops is not None:
            overrides["drops"] = args.drops
        if args.seed is not None:
            overrides["base_seed"] = args.seed
        if args.engine:
            overrides["engine"] = args.engine
        if args.pilot_noise_var is not None:
            overrides["pilot_noise_var"] = args.pilot_noise_var
        if args.out_dir:
            overrides["out_dir"] = args.out_dir
        config = replace(config, **overrides)
        records = run_campaign(config, workers=args.workers,
                               progress=lambda d, n: log.info("drop %d/%d done", d, n))
        eps = config.params(Mode.WMMSE, 0.0).deactivation_eps
        csv_path, summary_path = write_results(records, config.out_dir, eps)
    except (ConfigError, ModelError, ValueError, OSError, json.JSONDecodeError) as exc:
        log.error("error: %s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical error: %s", exc)
        return 3
    for row in summarize(records, eps):
        log.info("%-9s qos=%-4g avg_deg=%.3f deact=%.3f sum_rate=%.2f", row["algorithm"], row["qos"],
                 row["avg_degradation_unsatisfied"], row["deactivated_fraction"], row["mean_sum_rate"])
    log.info("wrote %s and %s", csv_path, summary_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
