"""Bias and return measurements, run records and cross-seed aggregation."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .controller import _rng, _tables, sample_test_trajectory
from .mdp import MdpSpec, greedy_action, rollout_mc_returns

RECORD_COLUMNS = ("step", "M_t", "tau_tilde", "bias", "proxy_bias", "return", "wall_ms")
ADAPTATION_COLUMNS = ("iteration", "tau_tilde", "M_prev", "M_next", "branch")


class CadenceMismatchError(ValueError):
    pass


def measure_bias(ensemble, mdp: MdpSpec, H: int, gamma: Optional[float] = None, seed=0,
                 n_trajectories: int = 1, subset: Optional[Sequence[int]] = None) -> float:
    """Average over visited pairs of ``mean_i Q^i(s, a)`` minus the MC return.

    With ``subset`` the estimate is ``min_{i in subset} Q^i`` instead of the
    mean.  The test trajectory is greedy with respect to the ensemble mean.
    """
    q = _tables(ensemble)
    rng = _rng(seed)
    est = q.mean(axis=0) if subset is None else q[list(subset)].min(axis=0)
    total = 0.0
    for _ in range(n_trajectories):
        traj = sample_test_trajectory(q, mdp, H, gamma, rng, min_pairs=1)
        total += float((est[traj.states, traj.actions] - traj.returns).mean())
    return total / n_trajectories


def measure_return(ensemble, mdp: MdpSpec, episode_cap: int, seed=0) -> float:
    """Undiscounted reward of one greedy episode of at most ``episode_cap`` steps."""
    if episode_cap < 1:
        raise ValueError("episode_cap must be >= 1")
    q = _tables(ensemble)
    rng = _rng(seed)
    policy = q.mean(axis=0)
    if episode_cap == 1:
        s = mdp.sample_start(rng)
        return mdp.step(s, greedy_action(policy[s], rng), rng)[0]
    return float(rollout_mc_returns(mdp, policy, episode_cap - 1, seed=rng).rewards.sum())


def spec_hash(mdp: MdpSpec) -> str:
    return hashlib.sha256(mdp.to_json().encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    adaptations: list = field(default_factory=list)

    def append(self, **row) -> None:
        missing = set(RECORD_COLUMNS) - set(row)
        if missing:
            raise ValueError(f"missing columns {sorted(missing)}")
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("rows must be appended in increasing step order")
        self.rows.append({k: row[k] for k in RECORD_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def steps(self) -> np.ndarray:
        return self.column("step")

    def tail_mean(self, name: str, fraction: float = 0.2) -> float:
        """Mean of a column over the last ``fraction`` of eval points."""
        col = self.column(name)
        k = max(1, int(round(fraction * col.size)))
        return float(col[-k:].mean())

    def to_csv(self, path) -> None:
        _write_csv(path, RECORD_COLUMNS, ([r[c] for c in RECORD_COLUMNS] for r in self.rows))

    def adaptations_to_csv(self, path) -> None:
        _write_csv(path, ADAPTATION_COLUMNS, self.adaptations)

    @classmethod
    def from_csv(cls, path, metadata: Optional[dict] = None) -> "RunRecord":
        rec = cls(metadata=dict(metadata or {}))
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                vals = {k: float(row[k]) for k in RECORD_COLUMNS}
                vals["step"] = int(vals["step"])
                vals["M_t"] = int(vals["M_t"])
                rec.append(**vals)
        return rec


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@dataclass
class Aggregate:
    steps: np.ndarray
    mean: dict
    std: dict
    n_runs: int

    def to_csv(self, path) -> None:
        cols = [c for c in RECORD_COLUMNS if c != "step"]
        header = ["step"] + [f"{c}_{k}" for c in cols for k in ("mean", "std")]
        rows = ([int(s)] + [v for c in cols for v in (self.mean[c][i], self.std[c][i])]
                for i, s in enumerate(self.steps))
        _write_csv(path, header, rows)


def aggregate_runs(records: Sequence[RunRecord]) -> Aggregate:
    """Pointwise mean and sample std (``n - 1`` denominator) across records."""
    if not records:
        raise ValueError("no records to aggregate")
    steps = records[0].steps
    for r in records[1:]:
        if r.steps.shape != steps.shape or not np.array_equal(r.steps, steps):
            raise CadenceMismatchError("records do not share an evaluation cadence")
    mean, std = {}, {}
    for c in RECORD_COLUMNS:
        if c == "step":
            continue
        mat = np.stack([r.column(c) for r in records])
        mean[c] = mat.mean(axis=0)
        std[c] = mat.std(axis=0, ddof=1) if len(records) > 1 else np.zeros(steps.size)
    return Aggregate(steps, mean, std, len(records))


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n",
                          encoding="utf-8")
