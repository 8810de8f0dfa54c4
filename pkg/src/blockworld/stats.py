"""Aggregation of run records into reporting statistics.

The headline number is the interquartile mean over seeds with a
stratified bootstrap confidence interval: episodes are resampled with
replacement within each seed (stratum), per-seed success rates are
recomputed, and the IQM of those rates forms one bootstrap replicate.
The interval is the [2.5%, 97.5%] percentile range of the replicates.

Trimming uses the integer convention: drop floor(n/4) values from each
end and average the rest.  With 5 seeds this drops exactly one value per
side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AggregateResult:
    iqm: float
    ci_low: float
    ci_high: float
    n_seeds: int
    n_bootstrap: int
    key: tuple | None = None

    def __post_init__(self) -> None:
        if not self.ci_low <= self.iqm <= self.ci_high:
            raise ValueError("confidence interval must bracket the IQM")


def iqm(values: Sequence[float]) -> float:
    """25%-trimmed mean: drop floor(n/4) smallest and largest values."""
    data = np.sort(np.asarray(values, dtype=np.float64))
    if data.size == 0:
        raise ValueError("iqm of an empty sequence")
    k = data.size // 4
    return float(data[k:data.size - k].mean())


def stratified_bootstrap_ci(per_seed_outcomes: Sequence[Sequence[float]],
                            n_bootstrap: int = 2000, level: float = 0.95,
                            rng: np.random.Generator | None = None,
                            key: tuple | None = None) -> AggregateResult:
    """IQM over per-seed means with a stratified percentile bootstrap.

    ``per_seed_outcomes[i]`` holds seed i's episode outcomes (for success
    rates these are 0/1 values, but any reals work).  Needs at least two
    seeds, each with at least one outcome.
    """
    strata = [np.asarray(outcomes, dtype=np.float64) for outcomes in per_seed_outcomes]
    if len(strata) < 2:
        raise ValueError("stratified bootstrap needs at least two seeds")
    if any(s.size == 0 for s in strata):
        raise ValueError("every seed needs at least one episode outcome")
    if rng is None:
        rng = np.random.default_rng(0)
    point = iqm([float(s.mean()) for s in strata])
    replicates = np.empty(n_bootstrap, dtype=np.float64)
    for b in range(n_bootstrap):
        rates = [float(s[rng.integers(s.size, size=s.size)].mean()) for s in strata]
        replicates[b] = iqm(rates)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(replicates, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    # The percentile interval is widened, if needed, to bracket the point
    # estimate, keeping the declared invariant even on skewed replicates.
    return AggregateResult(
        iqm=point,
        ci_low=min(float(lo), point),
        ci_high=max(float(hi), point),
        n_seeds=len(strata),
        n_bootstrap=n_bootstrap,
        key=key,
    )


def generalization_gap(train: AggregateResult, eval_: AggregateResult) -> float:
    """Training-task IQM minus evaluation-task IQM."""
    if train.key != eval_.key:
        raise ValueError(f"grouping mismatch: {train.key} vs {eval_.key}")
    return train.iqm - eval_.iqm


# --- CSV aggregation -------------------------------------------------------------

AGGREGATE_HEADER = "algorithm,setting,mode,iqm,ci_low,ci_high,n_seeds"


def _final_rows(rows: list[dict]) -> list[dict]:
    """Keep each seed's last-step row within an already-grouped record set."""
    by_seed: dict[str, dict] = {}
    for row in rows:
        seed = row["seed"]
        if seed not in by_seed or int(row["step"]) >= int(by_seed[seed]["step"]):
            by_seed[seed] = row
    return list(by_seed.values())


def aggregate_metrics(csv_path, group_by: Sequence[str] = ("algorithm", "setting", "mode"),
                      n_bootstrap: int = 2000, level: float = 0.95,
                      rng: np.random.Generator | None = None) -> list[dict]:
    """Aggregate a metrics CSV into one row per group.

    For each group the final (max-step) record of every seed contributes
    its episode outcomes, reconstructed from the ``successes`` and
    ``episodes`` columns.
    """
    alias = {"algo": "algorithm"}
    group_by = tuple(alias.get(g.strip(), g.strip()) for g in group_by)
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise ValueError(f"{csv_path} is empty")
        missing = {"seed", "step", "successes", "episodes"} - set(reader.fieldnames)
        missing |= set(group_by) - set(reader.fieldnames)
        if missing:
            raise ValueError(f"metrics CSV is missing columns: {sorted(missing)}")
        rows = list(reader)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[g] for g in group_by), []).append(row)
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for key in sorted(groups):
        finals = _final_rows(groups[key])
        outcomes = []
        for row in finals:
            successes = int(row["successes"])
            episodes = int(row["episodes"])
            outcomes.append([1.0] * successes + [0.0] * (episodes - successes))
        agg = stratified_bootstrap_ci(outcomes, n_bootstrap, level, rng, key=key)
        record = dict(zip(group_by, key))
        record.update(iqm=agg.iqm, ci_low=agg.ci_low, ci_high=agg.ci_high,
                      n_seeds=agg.n_seeds)
        out.append(record)
    return out


def write_aggregate_csv(path, rows: list[dict],
                        group_by: Sequence[str] = ("algorithm", "setting", "mode")) -> None:
    with open(path, "w") as f:
        f.write(AGGREGATE_HEADER + "\n")
        for row in rows:
            cells = [str(row.get(col, "")) for col in ("algorithm", "setting", "mode")]
            f.write(",".join(cells) + f",{row['iqm']:.6f},{row['ci_low']:.6f},"
                    f"{row['ci_high']:.6f},{row['n_seeds']}\n")
