"""Multi-seed metrics and plot-data emission from finished run directories."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractViolation
from .gate import BranchCurve, decide, score_branch
from .learner import write_curve_csv
from .workflow import NC_ID, dump_json


@dataclass(frozen=True)
class MetricsRow:
    env: str
    method: str
    n_seeds: int
    max_mean: float
    max_std: float
    avg_mean: float
    avg_std: float

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "method": self.method,
            "n_seeds": self.n_seeds,
            "max_mean": self.max_mean,
            "max_std": self.max_std,
            "avg_mean": self.avg_mean,
            "avg_std": self.avg_std,
        }


def dedup_curve(curve: Iterable[Sequence]) -> list[tuple[int, float]]:
    """Keep the first point for each env-step value, in step order."""
    seen: dict[int, float] = {}
    for s, v in curve:
        seen.setdefault(int(s), float(v))
    return sorted(seen.items())


def curve_max_avg(curve: Iterable[Sequence]) -> tuple[float, float]:
    pts = dedup_curve(curve)
    if not pts:
        raise ContractViolation("empty selected curve")
    values = [v for _, v in pts]
    return max(values), statistics.fmean(values)


def compute_metrics(ledgers: Sequence[dict]) -> list[MetricsRow]:
    """Per (env, method): Max and Avg of the selected curve, mean and population std over seeds."""
    if not ledgers:
        raise ContractViolation("compute_metrics needs at least one ledger")
    groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for led in ledgers:
        groups.setdefault((led["env"], led["method"]), []).append(curve_max_avg(led["selected_curve"]))
    rows = []
    for (env, method), vals in sorted(groups.items()):
        maxes = [m for m, _ in vals]
        avgs = [a for _, a in vals]
        rows.append(
            MetricsRow(
                env,
                method,
                len(vals),
                statistics.fmean(maxes),
                statistics.pstdev(maxes),
                statistics.fmean(avgs),
                statistics.pstdev(avgs),
            )
        )
    return rows


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["env", "method", "n_seeds", "max_mean", "max_std", "avg_mean", "avg_std"])
    for r in rows:
        writer.writerow(
            [r.env, r.method, r.n_seeds, repr(r.max_mean), repr(r.max_std), repr(r.avg_mean), repr(r.avg_std)]
        )
    return buf.getvalue()


def find_ledgers(root: str | Path) -> list[Path]:
    root = Path(root)
    if (root / "ledger.json").is_file():
        return [root / "ledger.json"]
    return sorted(root.rglob("ledger.json"))


def recompute_decisions(ledger: dict, tau_tie: float | None = None, k: int | None = None) -> list[dict]:
    """Re-run the gate on the stored branch curves and compare with the ledger."""
    opts = ledger.get("options") or {}
    tau = tau_tie if tau_tie is not None else opts.get("tau_tie", 0.02)
    k = k if k is not None else opts.get("score_k", 5)
    by_cp: dict[str, list[dict]] = {}
    for rec in ledger.get("branches", []):
        by_cp.setdefault(rec["checkpoint"], []).append(rec)
    recorded = {d["checkpoint"]: d for d in ledger.get("decisions", [])}
    out = []
    for label in sorted(by_cp):
        recs = by_cp[label]
        scores = {
            r["branch_id"]: score_branch(BranchCurve(r["branch_id"], tuple(map(tuple, r["curve"]))), k) for r in recs
        }
        control = scores.pop(NC_ID, None)
        decision = decide(control, list(scores.values()), tau)
        stored = recorded.get(label)
        best = max(
            (m for b, m in decision.margins.items() if b != NC_ID and not math.isnan(m)),
            default=None,
        )
        out.append(
            {
                "checkpoint": label,
                "winner": decision.winner,
                "reason": decision.reason,
                "promoted": decision.promoted,
                "best_margin": best,
                "margins": decision.margins,
                "matches_ledger": stored is not None
                and stored["winner"] == decision.winner
                and stored["reason"] == decision.reason,
            }
        )
    return out


def report(runs_root: str | Path, out_dir: str | Path) -> dict:
    """Write metrics and plot data for every run under ``runs_root`` into ``out_dir``."""
    paths = find_ledgers(runs_root)
    if not paths:
        raise ContractViolation(f"no ledger.json found under {runs_root}")
    ledgers = [json.loads(p.read_text()) for p in paths]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = compute_metrics(ledgers)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    dump_json([r.to_dict() for r in rows], out / "metrics.json")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    decisions = {}
    for led in ledgers:
        tag = f"{led['method']}_{led['env']}_{led['seed']}"
        write_curve_csv(dedup_curve(led["selected_curve"]), curves / f"{tag}.csv")
        if led.get("branches"):
            decisions[tag] = recompute_decisions(led)
    dump_json(decisions, out / "decisions.json")
    return {"metrics": [r.to_dict() for r in rows], "decisions": decisions}
