"""Multi-trial evaluation: per-trial rows, per-(policy, scenario) means, orderings."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..atave import AtaveParams
from ..rl.cql import QFunction
from ..rl.rewards import RewardWeights
from .episode import EpisodeMetrics, SimParams, run_episode
from .scenario import PerceptionParams, PlacementParams, build_scenario

TRIAL_HEADER = ("policy", "scenario", "trial", "success", "time_s", "length_m", "exposure", "cover_util")
SUMMARY_HEADER = ("policy", "scenario", "trials", "success_rate", "time_s", "length_m", "exposure", "cover_util")
ABLATION = "cql_no_atave"
SUITE_POLICIES = ("cql", "shortest_path", "greedy_cover", ABLATION)
POOLED = "all"


@dataclass(frozen=True)
class TrialRow:
    policy: str
    scenario: str
    trial: int
    success: bool
    time_s: float
    length_m: float
    exposure: float
    cover_util: float

    @classmethod
    def from_metrics(cls, policy: str, scenario: str, trial: int, m: EpisodeMetrics) -> "TrialRow":
        return cls(policy, scenario, trial, m.success, m.navigation_time, m.trajectory_length,
                   m.threat_exposure, m.cover_utilization)


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    scenario: str
    trials: int
    success_rate: float
    time_s: float  # mean over successful trials, nan when none succeeded
    length_m: float  # likewise
    exposure: float
    cover_util: float


@dataclass
class SuiteResult:
    rows: list[TrialRow]
    traces: dict[tuple[str, str, int], list[dict]] = field(default_factory=dict)

    def summary(self) -> list[SummaryRow]:
        return summarize(self.rows)


@dataclass(frozen=True)
class SuiteSettings:
    sim: SimParams = SimParams()
    atave: AtaveParams = AtaveParams()
    weights: RewardWeights = RewardWeights()
    perception: PerceptionParams = PerceptionParams()
    placement: PlacementParams = PlacementParams()
    extent: tuple[float, float] = (50.0, 50.0)


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else math.nan


def summarize(rows: Sequence[TrialRow], pooled: bool = True) -> list[SummaryRow]:
    """Means per (policy, scenario), sorted by key; with ``pooled`` also per policy over all scenarios.

    Time and length average the successful trials only.
    """
    groups: dict[tuple[str, str], list[TrialRow]] = {}
    for r in rows:
        groups.setdefault((r.policy, r.scenario), []).append(r)
        if pooled:
            groups.setdefault((r.policy, POOLED), []).append(r)
    out = []
    for (policy, scenario), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: (r.scenario, r.trial))
        won = [r for r in rs if r.success]
        out.append(
            SummaryRow(
                policy,
                scenario,
                len(rs),
                _mean([float(r.success) for r in rs]),
                _mean([r.time_s for r in won]),
                _mean([r.length_m for r in won]),
                _mean([r.exposure for r in rs]),
                _mean([r.cover_util for r in rs]),
            )
        )
    return out


def _run_trial(job) -> list[tuple[TrialRow, list[dict]]]:
    kind, trial, seed, policies, q, settings = job
    s = seed + trial
    scenario = build_scenario(kind, s, settings.extent, settings.perception, settings.placement, settings.sim.h_max)
    out = []
    for policy in policies:
        name = "cql" if policy == ABLATION else policy
        m, rows = run_episode(
            scenario,
            name,
            q=q,
            params=settings.sim,
            atave=settings.atave,
            weights=settings.weights,
            seed=s,
            atave_enabled=policy != ABLATION,
        )
        out.append((TrialRow.from_metrics(policy, kind, trial, m), rows))
    return out


def run_suite(
    scenarios: Sequence[str],
    policies: Sequence[str],
    trials: int,
    seed: int,
    q: QFunction | None = None,
    settings: SuiteSettings = SuiteSettings(),
    workers: int = 1,
    keep_traces: bool = False,
) -> SuiteResult:
    """Run every policy on ``trials`` seeded scenarios of each kind.

    Trial ``t`` of every kind uses scenario and episode seed ``seed + t``, so
    all policies face the same scenarios. Results do not depend on ``workers``.
    """
    unknown = [p for p in policies if p not in SUITE_POLICIES]
    if unknown:
        raise ValueError(f"unknown policies {unknown}; expected a subset of {SUITE_POLICIES}")
    if trials < 1:
        raise ValueError("trials must be positive")
    if q is None and any(p in ("cql", ABLATION) for p in policies):
        raise ValueError("the cql policies need a Q function")
    jobs = [(kind, t, seed, tuple(policies), q, settings) for kind in scenarios for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    rows, traces = [], {}
    for res in results:
        for row, trace in res:
            rows.append(row)
            if keep_traces:
                traces[(row.policy, row.scenario, row.trial)] = trace
    rows.sort(key=lambda r: (r.policy, r.scenario, r.trial))
    return SuiteResult(rows, traces)


def compare(summary: Sequence[SummaryRow], subject: str = "cql") -> dict:
    """Per scenario and metric: every policy's value, the ranking, and ``subject`` vs each other policy.

    Success and cover utilization rank high-to-low, exposure low-to-high.
    Relative change is ``(subject - other) / other`` (nan when ``other`` is 0).
    """
    higher_better = {"success_rate": True, "exposure": False, "cover_util": True}
    table: dict[str, dict[str, SummaryRow]] = {}
    for r in summary:
        table.setdefault(r.scenario, {})[r.policy] = r
    out: dict = {}
    for scenario in sorted(table):
        per = table[scenario]
        entry = {}
        for metric, hi in higher_better.items():
            values = {p: getattr(r, metric) for p, r in sorted(per.items())}
            ranking = sorted(values, key=lambda p: (-values[p] if hi else values[p], p))
            vs = {}
            if subject in values:
                for p, v in values.items():
                    if p == subject:
                        continue
                    s = values[subject]
                    vs[p] = {
                        "better": bool(s > v if hi else s < v),
                        "relative": (s - v) / v if v else math.nan,
                    }
            entry[metric] = {"values": values, "ranking": ranking, "subject_vs": vs}
        out[scenario] = entry
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_rows(path: str | Path, header: Sequence[str], rows: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(getattr(r, h)) for h in header])


def read_trial_rows(path: str | Path) -> list[TrialRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != TRIAL_HEADER:
            raise ValueError(f"{path}: unexpected header {rd.fieldnames}")
        return [
            TrialRow(
                d["policy"], d["scenario"], int(d["trial"]), d["success"] == "1",
                float(d["time_s"]), float(d["length_m"]), float(d["exposure"]), float(d["cover_util"]),
            )
            for d in rd
        ]


def nan_to_none(obj):
    """JSON-safe copy with nan replaced by null."""
    if isinstance(obj, dict):
        return {k: nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [nan_to_none(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj
