"""Probabilistic forecast scores and their aggregation into rank tables.

Scores accept any forecast object exposing ``mean()``, ``quantile(q)``
and ``density(truth)`` (both :class:`~ordforecast.forecaster.ForecastDistribution`
and :class:`~ordforecast.baselines.GaussianForecast` do).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "QQ_GRID",
    "DENSITY_FLOOR",
    "METRICS",
    "MetricReport",
    "RankTable",
    "nll",
    "rmse",
    "qq_distance",
    "qq_curve",
    "evaluate",
    "rank_table",
    "reports_to_csv",
    "reports_from_csv",
    "reports_to_json",
]

QQ_GRID = np.round(np.arange(1, 100) / 100.0, 2)
DENSITY_FLOOR = 1e-12
METRICS = ("nll", "rmse", "qq_distance")


def _truth(forecast, truth):
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if truth.size != forecast.horizon:
        raise ValueError(f"truth has {truth.size} steps, forecast has {forecast.horizon}")
    return truth


def nll(forecast, truth) -> float:
    """Mean negative log predictive density per step (density floored at 1e-12)."""
    truth = _truth(forecast, truth)
    if hasattr(forecast, "logpdf"):
        logd = np.maximum(forecast.logpdf(truth), np.log(DENSITY_FLOOR))
    else:
        logd = np.log(np.maximum(forecast.density(truth), DENSITY_FLOOR))
    return float(-np.mean(logd))


def rmse(forecast, truth) -> float:
    truth = _truth(forecast, truth)
    return float(np.sqrt(np.mean((forecast.mean() - truth) ** 2)))


def qq_curve(forecast, truth, grid=QQ_GRID):
    """Empirical coverage: share of steps whose truth lies at or below each predictive quantile."""
    truth = _truth(forecast, truth)
    qs = forecast.quantile(np.asarray(grid))
    return np.mean(truth[:, None] <= qs, axis=0)


def qq_distance(forecast, truth, grid=QQ_GRID) -> float:
    """Mean absolute gap between the QQ curve and the identity."""
    return float(np.mean(np.abs(qq_curve(forecast, truth, grid) - np.asarray(grid))))


@dataclass
class MetricReport:
    dataset: str
    model: str
    nll: float
    rmse: float
    qq_distance: float

    def score(self, metric):
        return getattr(self, metric)


def evaluate(dataset, model, forecast, truth) -> MetricReport:
    return MetricReport(dataset, model, nll(forecast, truth), rmse(forecast, truth),
                        qq_distance(forecast, truth))


@dataclass
class RankTable:
    """Average ranks per family and pairwise outperformance shares per metric.

    ``avg_rank[metric][family]`` lies in ``[1, n_families]``;
    ``outperform[metric][(a, b)]`` is the percentage of datasets where
    model ``a`` scored strictly lower than model ``b``.
    """

    families: list
    models: list
    datasets: list
    avg_rank: dict = field(default_factory=dict)
    outperform: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "families": self.families,
            "models": self.models,
            "datasets": self.datasets,
            "avg_rank": self.avg_rank,
            "outperform": {m: {f"{a}>{b}": v for (a, b), v in d.items()} for m, d in self.outperform.items()},
        }

    def render(self, focus=None, metrics=METRICS):
        """Plain-text table: outperformance of ``focus`` against each model, then average ranks."""
        focus = focus or self.families[0]
        rivals = [m for m in self.models if m != focus]
        label = {"nll": "NLL", "rmse": "RMSE", "qq_distance": "QQD"}
        head = ["metric"] + [f"%{focus}>{r}" for r in rivals] + [f"rank:{f}" for f in self.families]
        rows = [head]
        for met in metrics:
            row = [label.get(met, met)]
            row += [f"{self.outperform[met].get((focus, r), float('nan')):.1f}" for r in rivals]
            row += [f"{self.avg_rank[met][f]:.3f}" for f in self.families]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = [" | ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        lines.append(f"datasets: {len(self.datasets)}")
        return "\n".join(lines) + "\n"


def rank_table(reports, families=None, metrics=METRICS) -> RankTable:
    """Aggregate per-dataset reports into average ranks and outperformance shares.

    Parameters
    ----------
    reports : iterable of MetricReport
    families : dict, optional
        Family name -> list of model ids. A family's score on a dataset is
        the best (lowest) score among its members. Defaults to one family
        per model.

    Ranks are 1 (best) upward, lower scores being better; ties share the
    mean of the tied positions. Outperformance is computed between raw
    models, not families.
    """
    reports = list(reports)
    models = list(dict.fromkeys(r.model for r in reports))
    datasets = sorted(set(r.dataset for r in reports))
    if families is None:
        families = {m: [m] for m in models}
    table = {(r.dataset, r.model): r for r in reports}
    missing = [(d, m) for d in datasets for fam in families.values() for m in fam if (d, m) not in table]
    if missing:
        raise ValueError(f"missing reports for (dataset, model): {missing[:5]}")
    fam_names = list(families)
    out = RankTable(fam_names, models, datasets)
    for met in metrics:
        scores = np.array([[min(table[(d, m)].score(met) for m in families[f]) for f in fam_names]
                           for d in datasets])
        ranks = np.vstack([rankdata(row, method="average") for row in scores])
        out.avg_rank[met] = {f: float(v) for f, v in zip(fam_names, ranks.mean(axis=0))}
        pct = {}
        for a in models:
            for b in models:
                if a == b:
                    continue
                pairs = [(d, table.get((d, a)), table.get((d, b))) for d in datasets]
                pairs = [(ra, rb) for _, ra, rb in pairs if ra is not None and rb is not None]
                if pairs:
                    wins = sum(ra.score(met) < rb.score(met) for ra, rb in pairs)
                    pct[(a, b)] = 100.0 * wins / len(pairs)
        out.outperform[met] = pct
    return out


_FIELDS = ("dataset", "model", "nll", "rmse", "qq_distance")


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_FIELDS)
    for r in reports:
        w.writerow([r.dataset, r.model] + [repr(float(getattr(r, k))) for k in _FIELDS[2:]])
    return buf.getvalue()


def reports_from_csv(text) -> list:
    rows = csv.DictReader(io.StringIO(text))
    return [MetricReport(r["dataset"], r["model"], float(r["nll"]), float(r["rmse"]),
                         float(r["qq_distance"])) for r in rows]


def reports_to_json(reports) -> str:
    return json.dumps([asdict(r) for r in reports], indent=1, sort_keys=True) + "\n"
