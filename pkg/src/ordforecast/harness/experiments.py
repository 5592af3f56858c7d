"""Zero-shot and few-shot experiment pipelines.

Every random choice draws from a seed derived from ``(seed, dataset id,
purpose)``, and every output file is written with deterministic
formatting, so identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import baselines as bl
from ..embedding import extract_embeddings, project_2d, select_k, ward_cluster
from ..errors import ConfigError, DataError
from ..forecaster import ForecastDistribution, finetune, forecast, hyperparameter_grid
from ..metrics import evaluate, rank_table, reports_from_csv, reports_to_csv, reports_to_json
from ..quantizer import OrdinalSequence, build_quantizer
from ..seq2seq import TrainingConfig, evaluate_loss, init_model, train
from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .data import DatasetManifest, TimeSeries, make_windows, split_windows

__all__ = [
    "ExperimentConfig",
    "derive_seed",
    "aux_windows",
    "train_gum",
    "run_train_gum",
    "run_zero_shot",
    "few_shot_comparison",
    "run_few_shot",
    "run_embed",
    "run_report",
    "ZERO_SHOT_FAMILIES",
]

log = logging.getLogger(__name__)

GP_NAMES = {"matern52": "GP-M52", "rq": "GP-RQ"}


def derive_seed(seed, *keys) -> int:
    h = hashlib.sha256(repr((int(seed),) + tuple(str(k) for k in keys)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


# unset fields take these per-protocol values
PROTOCOL_DEFAULTS = {
    "zero_shot": {"context_len": 21, "horizon": 15, "min_length": 36, "ar_orders": (3, 4)},
    "few_shot": {"context_len": 50, "horizon": 100, "min_length": 1500, "ar_orders": (3, 6, 12, 18)},
}


@dataclass
class ExperimentConfig:
    """Everything a run needs besides the manifest.

    ``training`` holds :class:`TrainingConfig` fields for auxiliary
    pre-training; ``grid`` lists the ``n_h`` / ``dropout_rate`` /
    ``l2_lambda`` values to pre-train (few-shot) or the single
    configuration to use (zero-shot, first entry of each list).
    """

    protocol: str = "zero_shot"
    context_len: int | None = None
    horizon: int | None = None
    n_samples: int = 100
    min_length: int | None = None
    stride: int = 5
    quantize: str = "series"
    val_fraction: float = 0.2
    training: dict = field(default_factory=lambda: {"encoder_len": 50, "decoder_len": 25})
    grid: dict = field(default_factory=lambda: {"n_h": [64], "dropout_rate": [0.25], "l2_lambda": [1e-6]})
    finetune_epochs: int = 50
    naive_epochs: int | None = None
    gp_kernels: list = field(default_factory=lambda: ["matern52", "rq"])
    gp_restarts: int = 5
    gp_max_iter: int = 200
    gp_max_train: int = 200
    ar_orders: list | None = None
    checkpoint: str | None = None
    checkpoints: dict = field(default_factory=dict)
    embed_windows_per_series: int = 50
    k_min: int = 5
    k_max: int = 50
    output_dir: str = "runs/out"
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("zero_shot", "few_shot"):
            raise ConfigError(f"protocol must be zero_shot or few_shot, got {self.protocol!r}")
        for name, value in PROTOCOL_DEFAULTS[self.protocol].items():
            if getattr(self, name) is None:
                setattr(self, name, list(value) if isinstance(value, tuple) else value)
        if self.quantize not in ("window", "series"):
            raise ConfigError("quantize must be 'window' or 'series'")
        for name in ("context_len", "horizon", "n_samples", "stride", "finetune_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not all(self.grid.get(k) for k in ("n_h", "dropout_rate", "l2_lambda")):
            raise ConfigError("grid needs non-empty n_h, dropout_rate and l2_lambda lists")
        bad = [k for k in self.gp_kernels if k not in bl.KERNELS]
        if bad:
            raise ConfigError(f"unknown GP kernels {bad}")
        if not self.ar_orders or min(self.ar_orders) < 1:
            raise ConfigError("ar_orders must be non-empty positive integers")
        try:
            self.training_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid training section: {exc}") from None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path, overrides=None):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for key, value in (overrides or {}).items():
            target = d
            parts = key.split(".")
            for p in parts[:-1]:
                target = target.setdefault(p, {})
            target[parts[-1]] = value
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def training_config(self, **over) -> TrainingConfig:
        t = dict(self.training)
        t.setdefault("seed", self.seed)
        for k in ("n_h", "dropout_rate", "l2_lambda"):
            t.setdefault(k, self.grid[k][0])
        t.update(over)
        return TrainingConfig(**t)

    def families(self):
        fam = {"GUM": ["GUM"]}
        if self.protocol == "few_shot":
            fam["MOrdReD"] = ["MOrdReD"]
        fam["GP"] = [GP_NAMES[k] for k in self.gp_kernels]
        fam["AR"] = [f"AR{p}" for p in self.ar_orders]
        return fam


ZERO_SHOT_FAMILIES = ExperimentConfig().families()


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=lambda o: o.item() if isinstance(o, np.generic) else str(o)) + "\n"


def _resolved(cfg):
    # the output location is implied by where the file sits; leaving it out
    # keeps reports from identical runs byte-identical wherever they are written
    d = cfg.to_dict()
    d.pop("output_dir")
    return _dump_json(d)


def write_forecast(fc, path_stem):
    """Ordinal forecasts: ``(step, bin, lo, hi, probability)`` plus a trajectory matrix.
    Gaussian forecasts: ``(step, mean, variance)``."""
    path_stem = Path(path_stem)
    if isinstance(fc, ForecastDistribution):
        e = fc.quantizer.edges
        rows = [(t, k, float(e[k]), float(e[k + 1]), float(fc.probs[t, k]))
                for t in range(fc.horizon) for k in range(fc.quantizer.m)]
        _write(path_stem.with_suffix(".csv"), _csv(rows, ("step", "bin", "lo", "hi", "probability")))
        traj = "\n".join(",".join(str(int(v)) for v in row) for row in fc.trajectories) + "\n"
        _write(path_stem.with_name(path_stem.name + "_trajectories.csv"), traj)
    else:
        rows = [(t, float(mu), float(v)) for t, (mu, v) in enumerate(zip(fc.means, fc.variances))]
        _write(path_stem.with_suffix(".csv"), _csv(rows, ("step", "mean", "variance")))


def _emit_reports(out, reports, skipped, families, cfg):
    _write(out / "metrics.csv", reports_to_csv(reports))
    _write(out / "metrics.json", reports_to_json(reports))
    # a dataset enters the rank table only if every ranked model produced a report for it
    have = {(r.dataset, r.model) for r in reports}
    needed = [m for fam in families.values() for m in fam]
    ranked = []
    for d in dict.fromkeys(r.dataset for r in reports):
        gone = [m for m in needed if (d, m) not in have]
        if gone:
            skipped = skipped + [(d, "no report for " + " ".join(gone))]
        else:
            ranked.extend(r for r in reports if r.dataset == d)
    _write(out / "skipped.csv", _csv(skipped, ("dataset", "reason")))
    if ranked:
        rt = rank_table(ranked, families)
        _write(out / "rank_table.txt", rt.render("GUM"))
        _write(out / "rank_table.json", _dump_json(rt.to_dict()))
    else:
        rt = None
    _write(out / "resolved_config.json", _resolved(cfg))
    return rt


# --------------------------------------------------------------------------
# auxiliary training
# --------------------------------------------------------------------------


def aux_windows(series_list, m, tcfg: TrainingConfig, stride, quantize="series",
                range_horizon=None, val_fraction=0.2):
    """Pooled, independently quantized training/validation windows.

    ``quantize="series"`` bins every window of a series with one quantizer
    over the whole (extended) series range. ``"window"`` instead bins each
    window over its own context range extended by ``range_horizon`` steps,
    which mirrors how unseen series are handled at forecast time.
    """
    rh = range_horizon or tcfg.decoder_len
    tr, va = [], []
    for s in series_list:
        v = np.asarray(getattr(s, "values", s), dtype=float)
        pairs = make_windows(v, tcfg.encoder_len, tcfg.decoder_len, stride)
        a, b = split_windows(pairs, val_fraction)
        sq = build_quantizer(v, m, rh, extend=True) if quantize == "series" else None
        for dst, part in ((tr, a), (va, b)):
            for ctx, tgt in part:
                q = sq or build_quantizer(ctx, m, rh, extend=True)
                dst.append((q.encode(ctx), q.encode(tgt)))
    if not tr or not va:
        raise DataError("auxiliary corpus yields no training or no validation windows")
    return tr, va


def train_gum(aux_series, m, tcfg: TrainingConfig, stride=5, quantize="series",
              range_horizon=None, val_fraction=0.2):
    tr, va = aux_windows(aux_series, m, tcfg, stride, quantize, range_horizon, val_fraction)
    log.info("GUM training on %d windows (%d validation)", len(tr), len(va))
    model, hist = train(init_model(m, tcfg), tr, tcfg, va)
    model.meta.update(seed=tcfg.seed, quantize=quantize, n_aux=len(aux_series))
    return model, hist


def _grid_key(g):
    return f"nh{g['n_h']}_drop{g['dropout_rate']}_l2{g['l2_lambda']:g}"


def run_train_gum(manifest: DatasetManifest, cfg: ExperimentConfig, out_dir=None):
    """Pre-train one checkpoint per grid configuration on the auxiliary series."""
    out = Path(out_dir or cfg.output_dir)
    aux = manifest.load("auxiliary")
    if not aux:
        raise DataError("manifest lists no auxiliary series")
    written = {}
    for g in hyperparameter_grid(cfg.grid["n_h"], cfg.grid["dropout_rate"], cfg.grid["l2_lambda"]):
        key = _grid_key(g)
        tcfg = cfg.training_config(**g, seed=derive_seed(cfg.seed, "gum", key))
        model, hist = train_gum(aux, manifest.m, tcfg, cfg.stride, cfg.quantize, cfg.horizon,
                                cfg.val_fraction)
        path = save_checkpoint(model, out / f"gum_{key}.ckpt")
        _write(out / f"gum_{key}_history.json", _dump_json(hist))
        written[key] = str(path)
    _write(out / "checkpoints.json", _dump_json(written))
    _write(out / "resolved_config.json", _resolved(cfg))
    return written


# --------------------------------------------------------------------------
# zero-shot
# --------------------------------------------------------------------------


def _baselines(name, train_values, horizon, cfg, seed_key):
    out = {}
    for p in cfg.ar_orders:
        try:
            # the AR state at the origin is the last p observed values, which may reach past the lookback
            out[f"AR{p}"] = bl.ar_forecast(bl.fit_ar(train_values, p), train_values, horizon)
        except ValueError as exc:
            log.warning("%s: AR(%d) skipped: %s", name, p, exc)
    gp_train = train_values[-cfg.gp_max_train:]
    for k in cfg.gp_kernels:
        gm = bl.fit_gp(gp_train, k, cfg.gp_restarts, cfg.gp_max_iter,
                       seed=derive_seed(cfg.seed, name, seed_key, k))
        out[GP_NAMES[k]] = bl.gp_forecast(gm, horizon)
    return out


def run_zero_shot(manifest: DatasetManifest, cfg: ExperimentConfig, checkpoint=None, out_dir=None):
    """Forecast every evaluation series from its first ``context_len`` values.

    Returns ``(reports, rank_table, skipped)``; the same content is written
    to ``out_dir``. The checkpoint file is hashed before and after to
    confirm it was not modified.
    """
    out = Path(out_dir or cfg.output_dir)
    ckpt = checkpoint or cfg.checkpoint
    if ckpt is None:
        raise ConfigError("zero-shot needs a GUM checkpoint")
    before = file_sha256(ckpt)
    model = load_checkpoint(ckpt)
    T, H = cfg.context_len, cfg.horizon
    reports, skipped = [], []
    for entry in manifest.by_role("evaluation"):
        s = manifest_series(entry)
        need = max(T + H, cfg.min_length)
        if len(s) < need:
            skipped.append((s.name, f"length {len(s)} < {need}"))
            log.info("skipping %s: length %d < %d", s.name, len(s), need)
            continue
        context, truth = s.values[:T], s.values[T:T + H]
        q = build_quantizer(context, model.m, H, extend=True)
        fd = forecast(model, OrdinalSequence.from_values(context, q), H, cfg.n_samples,
                      seed=derive_seed(cfg.seed, s.name, "gum"))
        fcs = {"GUM": fd}
        fcs.update(_baselines(s.name, context, H, cfg, "zero_shot"))
        for name, fc in fcs.items():
            reports.append(evaluate(s.name, name, fc, truth))
            write_forecast(fc, out / "forecasts" / f"{s.name}__{name}")
    if file_sha256(ckpt) != before:
        raise RuntimeError("checkpoint file changed during a zero-shot run")
    rt = _emit_reports(out, reports, skipped, cfg.families(), cfg)
    return reports, rt, skipped


def manifest_series(entry) -> TimeSeries:
    from .data import load_series
    return load_series(entry.path, entry.id)


# --------------------------------------------------------------------------
# few-shot
# --------------------------------------------------------------------------


def few_shot_comparison(pretrained, series, tcfg: TrainingConfig, finetune_epochs=50,
                        naive_epochs=None, stride=1, val_fraction=0.2, naive_seed=None):
    """Fine-tune ``pretrained`` and train a from-scratch twin on the same windows.

    The naive model gets ``naive_epochs`` (default twice ``finetune_epochs``)
    and the same early-stopping rule. Both are scored by validation
    cross-entropy on the same chronological split.

    Returns ``(finetuned, naive, info)``.
    """
    naive_epochs = 2 * finetune_epochs if naive_epochs is None else naive_epochs
    ft_cfg = TrainingConfig(**{**tcfg.to_dict(), "max_epochs": finetune_epochs})
    ft, ft_hist = finetune(pretrained, series, ft_cfg, stride=stride, val_fraction=val_fraction)
    q = ft.quantizer
    v = np.asarray(getattr(series, "values", series), dtype=float)
    a, b = split_windows(make_windows(v, tcfg.encoder_len, tcfg.decoder_len, stride), val_fraction)
    tr = [(q.encode(x), q.encode(y)) for x, y in a]
    va = [(q.encode(x), q.encode(y)) for x, y in b]
    nv_cfg = TrainingConfig(**{**tcfg.to_dict(), "max_epochs": naive_epochs,
                               "seed": tcfg.seed if naive_seed is None else naive_seed})
    naive, nv_hist = train(init_model(pretrained.m, nv_cfg, quantizer=q), tr, nv_cfg, va)
    info = {
        "finetuned_val": ft_hist["best_val_loss"],
        "pretrained_val": ft_hist["pretrained_val_loss"],
        "naive_val": nv_hist["best_val_loss"],
        "finetune_epochs_run": ft_hist["epochs_run"],
        "naive_epochs_run": nv_hist["epochs_run"],
    }
    return ft, naive, info


def _few_shot_checkpoints(manifest, cfg, out):
    paths = dict(cfg.checkpoints)
    grid = hyperparameter_grid(cfg.grid["n_h"], cfg.grid["dropout_rate"], cfg.grid["l2_lambda"])
    missing = [g for g in grid if _grid_key(g) not in paths]
    if missing:
        log.info("pre-training %d missing grid checkpoints", len(missing))
        sub = ExperimentConfig.from_dict({**cfg.to_dict(), "grid": {
            k: sorted({g[k] for g in missing}) for k in ("n_h", "dropout_rate", "l2_lambda")}})
        trained = run_train_gum(manifest, sub, out / "pretrained")
        paths.update({k: v for k, v in trained.items() if k in {_grid_key(g) for g in missing}})
    return [(g, paths[_grid_key(g)]) for g in grid]


def run_few_shot(manifest: DatasetManifest, cfg: ExperimentConfig, out_dir=None):
    """Fine-tune every grid checkpoint per evaluation series and compare against baselines.

    The final ``horizon`` values of each series are the test segment, the
    ``context_len`` values before them the forecast context, and all
    values before the test segment the fine-tuning data.
    """
    out = Path(out_dir or cfg.output_dir)
    grid = _few_shot_checkpoints(manifest, cfg, out)
    P, H = cfg.context_len, cfg.horizon
    reports, skipped, selections = [], [], []
    for entry in manifest.by_role("evaluation"):
        s = manifest_series(entry)
        need = max(cfg.min_length, P + H)
        if len(s) < need:
            skipped.append((s.name, f"length {len(s)} < {need}"))
            continue
        train_part, truth = s.values[:-H], s.values[-H:]
        best = None
        try:
            for g, path in grid:
                pre = load_checkpoint(path)
                tcfg = cfg.training_config(**g, encoder_len=P,
                                           seed=derive_seed(cfg.seed, s.name, _grid_key(g)))
                ft, nv, info = few_shot_comparison(
                    pre, train_part, tcfg, cfg.finetune_epochs, cfg.naive_epochs,
                    stride=cfg.stride, val_fraction=cfg.val_fraction,
                    naive_seed=derive_seed(cfg.seed, s.name, "naive", _grid_key(g)))
                if best is None or info["finetuned_val"] < best[2]["finetuned_val"]:
                    best = (g, (ft, nv), info)
        except DataError as exc:
            skipped.append((s.name, str(exc)))
            continue
        g, (ft, nv), info = best
        selections.append((s.name, _grid_key(g), info["finetuned_val"], info["naive_val"]))
        context = train_part[-P:]
        seq = OrdinalSequence.from_values(context, ft.quantizer)
        fcs = {
            "GUM": forecast(ft, seq, H, cfg.n_samples, seed=derive_seed(cfg.seed, s.name, "gum")),
            "MOrdReD": forecast(nv, seq, H, cfg.n_samples, seed=derive_seed(cfg.seed, s.name, "naive")),
        }
        fcs.update(_baselines(s.name, train_part, H, cfg, "few_shot"))
        for name, fc in fcs.items():
            reports.append(evaluate(s.name, name, fc, truth))
            write_forecast(fc, out / "forecasts" / f"{s.name}__{name}")
    _write(out / "selection.csv", _csv(selections, ("dataset", "grid", "finetuned_val", "naive_val")))
    rt = _emit_reports(out, reports, skipped, cfg.families(), cfg)
    return reports, rt, skipped


# --------------------------------------------------------------------------
# embedding analysis and report regeneration
# --------------------------------------------------------------------------


def run_embed(manifest: DatasetManifest, cfg: ExperimentConfig, checkpoint=None, out_dir=None):
    """Encoder states for sampled auxiliary excerpts plus every evaluation context.

    Writes ``vectors.csv`` (raw states for external projection tools) and
    ``clusters.csv`` (Ward cluster, PCA coordinates, last context bin and
    the cluster's mean last bin as colour key).
    """
    out = Path(out_dir or cfg.output_dir)
    model = load_checkpoint(checkpoint or cfg.checkpoint)
    T = cfg.context_len
    ids, groups, seqs = [], [], []
    for s in manifest.load("auxiliary"):
        v = s.values
        n_win = len(v) - T + 1
        if n_win < 1:
            continue
        rng = np.random.default_rng(derive_seed(cfg.seed, s.name, "embed"))
        offsets = np.sort(rng.choice(n_win, size=min(cfg.embed_windows_per_series, n_win), replace=False))
        sq = build_quantizer(v, model.m, cfg.horizon, extend=True) if cfg.quantize == "series" else None
        for o in offsets:
            ctx = v[o:o + T]
            q = sq or build_quantizer(ctx, model.m, cfg.horizon, extend=True)
            ids.append(f"{s.name}@{o}")
            groups.append("auxiliary")
            seqs.append(q.encode(ctx))
    for s in manifest.load("evaluation"):
        if len(s) < T:
            continue
        ctx = s.values[:T]
        ids.append(f"{s.name}@0")
        groups.append("evaluation")
        seqs.append(build_quantizer(ctx, model.m, cfg.horizon, extend=True).encode(ctx))
    if len(seqs) < 2:
        raise DataError("need at least two excerpts for embedding analysis")
    H = extract_embeddings(model, seqs)
    k_max = min(cfg.k_max, len(seqs))
    k_min = min(cfg.k_min, k_max)
    if k_min >= 2:
        k, cm, scores = select_k(H, k_min, k_max)
    else:
        k, cm, scores = 1, ward_cluster(H, 1), {}
    xy = project_2d(H)
    last = np.array([sq[-1] for sq in seqs], dtype=float)
    colour = {c: float(last[cm.assignments == c].mean()) for c in np.unique(cm.assignments)}
    _write(out / "vectors.csv", _csv(
        [(i, g, *map(float, h)) for i, g, h in zip(ids, groups, H)],
        ("id", "group", *[f"h{j}" for j in range(H.shape[1])])))
    _write(out / "clusters.csv", _csv(
        [(i, g, int(c), float(x), float(y), int(lb), colour[c])
         for i, g, c, (x, y), lb in zip(ids, groups, cm.assignments, xy, last)],
        ("id", "group", "cluster", "x", "y", "last_bin", "cluster_mean_last_bin")))
    _write(out / "silhouette.csv", _csv(sorted(scores.items()), ("k", "silhouette")))
    _write(out / "resolved_config.json", _resolved(cfg))
    return k, cm, H


def run_report(metrics_csv, families=None, out_path=None, focus="GUM"):
    """Rebuild the rank table from a ``metrics.csv`` file alone."""
    reports = reports_from_csv(Path(metrics_csv).read_text())
    if families is None:
        models = list(dict.fromkeys(r.model for r in reports))
        families = {}
        for m in models:
            fam = "GP" if m.startswith("GP-") else "AR" if m.startswith("AR") else m
            families.setdefault(fam, []).append(m)
        # same column order as the experiment runs write
        order = {"GUM": 0, "MOrdReD": 1, "GP": 2, "AR": 3}
        families = dict(sorted(families.items(), key=lambda kv: order.get(kv[0], len(order))))
    rt = rank_table(reports, families)
    text = rt.render(focus)
    if out_path:
        _write(out_path, text)
    return rt, text
