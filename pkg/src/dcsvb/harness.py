"""
Experiment driver.

A run sweeps sampling rates, trials and algorithm variants over one data
source and writes its artifacts to an output directory:

``results.csv``
    One :class:`MetricRow` per (variant, rate, trial) plus one aggregate
    row per (variant, rate) whose ``trial`` field reads ``mean``.
``trace_<variant>.csv``
    Per-iteration convergence traces of every cell of that variant,
    preceded by ``#`` lines describing the wavelet layout.
``plots/*.svg``
    NMSE and PSNR against rate, NMSE against iteration.
``manifest.txt``
    Canonical config echo, seed and library versions.

Each (rate, trial) cell draws its data, matrices and noise from a generator
seeded by ``(seed, rate, trial)``, so every variant sees the same instance
and a rerun with the same seed reproduces the CSV byte for byte once
``timing = off``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .consensus import complete_graph, harary_graph, load_edges
from .decentralized import DecentralizedConfig, run_decentralized
from .imageio import block_join, block_split, load_pgm, load_signals_csv
from .jsm import default_hyperparams, make_ensemble, synth_jsm1
from .metrics import nmse, psnr
from .plotting import line_chart_svg
from .vb import VbConfig, run_centralized
from .wavelets import (
    WaveletPyramid,
    build_tree_index,
    forward_dwt,
    inverse_dwt,
    make_layout,
)

__all__ = [
    "ConfigError",
    "ExperimentError",
    "Variant",
    "ExperimentConfig",
    "MetricRow",
    "parse_config",
    "load_config",
    "parse_variant",
    "build_topology",
    "run_experiment",
    "RESULT_COLUMNS",
    "TRACE_COLUMNS",
]

RESULT_COLUMNS = ("variant", "rate", "trial", "iterations", "nmse", "psnr",
                  "wall_time", "message_bytes")
TRACE_COLUMNS = ("rate", "trial", "iteration", "nmse", "elbo",
                 "residual_mean", "consensus_rounds", "message_bytes")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """A solver failure tagged with the cell that raised it."""

    def __init__(self, variant, rate, trial, cause):
        super().__init__(f"variant={variant} rate={rate:g} trial={trial}: "
                         f"{type(cause).__name__}: {cause}")
        self.variant = variant
        self.rate = rate
        self.trial = trial


@dataclass(frozen=True)
class Variant:
    """``<engine>-<structured|unstructured>-<bkf|gaussian>``."""

    engine: str
    structured: bool
    slab: str

    @property
    def name(self):
        kind = "structured" if self.structured else "unstructured"
        return f"{self.engine}-{kind}-{self.slab}"


def parse_variant(text):
    parts = text.strip().lower().split("-")
    if (len(parts) != 3 or parts[0] not in ("centralized", "decentralized")
            or parts[1] not in ("structured", "unstructured")
            or parts[2] not in ("bkf", "gaussian")):
        raise ConfigError(
            f"bad variant {text!r}: expected centralized|decentralized - "
            "structured|unstructured - bkf|gaussian")
    return Variant(parts[0], parts[1] == "structured", parts[2])


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _variants(text):
    return tuple(parse_variant(v) for v in text.split(",") if v.strip())


@dataclass
class ExperimentConfig:
    """Every knob of a run; the field names double as config-file keys."""

    input_kind: str = "synthetic"
    input_path: str = ""
    side: int = 16
    ndim: int = 2
    block_size: int = 32
    levels: int = 3
    wavelet: str = "db4"
    K: int = 4
    common_sparsity: float = 0.1
    innov_sparsity: float = 0.05
    snr_db: float = 40.0
    rates: tuple = (0.5,)
    variants: tuple = (Variant("centralized", True, "bkf"),)
    topology: str = "harary:5"
    trials: int = 10
    seed: int = 0
    output_dir: str = "results"
    max_iter: int = 100
    rel_tol: float = 1e-4
    support_mode: str = "hard"
    anneal_sweeps: int = 10
    damping: float = 1.0
    rho: float = 1.0
    consensus_tol: float = 1e-6
    consensus_max_rounds: int = 50
    gamma_shape: float = 1.0
    gamma_rate: float = 0.1
    noise_shape: float = 1e-6
    noise_rate: float = 1e-6
    beta_e: float = 1.0
    beta_f: float = 1.0
    root_active: float = 0.9
    root_inactive: float = 0.1
    threshold_fraction: float = 0.5
    timing: bool = True
    plots: bool = True

    def __post_init__(self):
        if self.input_kind not in ("synthetic", "image_pgm", "signals_csv"):
            raise ConfigError(f"unknown input_kind {self.input_kind!r}")
        if self.input_kind != "synthetic" and not self.input_path:
            raise ConfigError(f"input_kind {self.input_kind} needs input_path")
        if not self.rates or any(not 0 < r <= 1 for r in self.rates):
            raise ConfigError("rates must be non-empty and lie in (0, 1]")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        if self.ndim not in (1, 2):
            raise ConfigError("ndim must be 1 or 2")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate variants")

    # -- conversions -------------------------------------------------------
    def vb_config(self):
        return VbConfig(max_iter=self.max_iter, rel_tol=self.rel_tol,
                        support_mode=self.support_mode,
                        anneal_sweeps=self.anneal_sweeps,
                        damping=self.damping)

    def decentralized_config(self):
        return DecentralizedConfig(rho=self.rho, tol=self.consensus_tol,
                                   max_rounds=self.consensus_max_rounds)

    def hyperparams(self, layout, structured=True, slab="bkf"):
        return default_hyperparams(
            layout, structured, slab,
            gamma=(self.gamma_shape, self.gamma_rate),
            noise=(self.noise_shape, self.noise_rate),
            beta=(self.beta_e, self.beta_f),
            root_fractions=(self.root_active, self.root_inactive),
            threshold_fraction=self.threshold_fraction)

    def to_text(self):
        """Canonical ``key = value`` lines, parseable by :func:`parse_config`."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "rates":
                v = ",".join(f"{r:g}" for r in v)
            elif f.name == "variants":
                v = ",".join(x.name for x in v)
            elif isinstance(v, bool):
                v = "on" if v else "off"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_CONVERTERS = {
    "rates": _floats,
    "variants": _variants,
}


def parse_config(text, base_dir=None):
    """Parse flat ``key = value`` text; ``#`` starts a comment.

    Unknown or repeated keys raise :class:`ConfigError`. Relative
    ``input_path`` and ``output_dir`` values are taken relative to
    ``base_dir`` when it is given.
    """
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    defaults = ExperimentConfig()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        try:
            if key in _CONVERTERS:
                values[key] = _CONVERTERS[key](val)
            else:
                kind = type(getattr(defaults, key))
                if kind is bool:
                    values[key] = _parse_bool(val)
                else:
                    values[key] = kind(val)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        except ValueError:
            raise ConfigError(
                f"line {lineno}: bad value {val!r} for {key}") from None
    if base_dir is not None:
        for key in ("input_path", "output_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    return ExperimentConfig(**values)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def build_topology(spec, K):
    """``complete``, ``ring``, ``harary:P`` or ``edges:<path>``."""
    spec = spec.strip()
    if spec == "complete":
        return complete_graph(K)
    if spec == "ring":
        return harary_graph(K, 2) if K > 2 else complete_graph(K)
    if spec.startswith("harary:"):
        P = int(spec.split(":", 1)[1])
        return harary_graph(K, min(P, K - 1)) if K > 1 else complete_graph(1)
    if spec.startswith("edges:"):
        topo = load_edges(spec.split(":", 1)[1])
        if topo.K != K:
            raise ConfigError(f"edge list has {topo.K} nodes, data has {K}")
        return topo
    raise ConfigError(f"unknown topology {spec!r}")


@dataclass
class MetricRow:
    variant: str
    rate: float
    trial: object          # int, or "mean" on aggregate rows
    iterations: float
    nmse: float
    psnr: float
    wall_time: float
    message_bytes: float

    def cells(self):
        return [self.variant, _fmt(self.rate), str(self.trial),
                _fmt(self.iterations), _fmt(self.nmse), _fmt(self.psnr),
                _fmt(self.wall_time), _fmt(self.message_bytes)]


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.10g}"


# --------------------------------------------------------------------------
# data sources
# --------------------------------------------------------------------------

@dataclass
class _Source:
    """Signals in their natural domain plus the wavelet machinery."""

    layout: object
    tree: object
    signals: np.ndarray = None      # (K, ...) fixed data, None if synthetic
    grid_shape: tuple = None        # for images: the full picture
    peak: float = 1.0
    hp_data: object = None

    def to_coeffs(self, signals):
        return np.stack([forward_dwt(s, self.layout.levels,
                                     self.layout.wavelet).coeffs
                         for s in signals])

    def to_signals(self, coeffs):
        return np.stack([inverse_dwt(WaveletPyramid(self.layout, c))
                         for c in coeffs])


def _make_source(cfg):
    if cfg.input_kind == "synthetic":
        layout = make_layout(cfg.side, cfg.levels, cfg.ndim, cfg.wavelet)
        return _Source(layout, build_tree_index(layout),
                       hp_data=cfg.hyperparams(layout))
    if cfg.input_kind == "image_pgm":
        grid = load_pgm(cfg.input_path)
        blocks = block_split(grid, cfg.block_size)
        layout = make_layout(cfg.block_size, cfg.levels, 2, cfg.wavelet)
        return _Source(layout, build_tree_index(layout), np.stack(blocks),
                       grid.shape, 1.0)
    signals = load_signals_csv(cfg.input_path)
    n = signals.shape[1]
    layout = make_layout(n, cfg.levels, 1, cfg.wavelet)
    peak = float(np.max(np.abs(signals))) or 1.0
    return _Source(layout, build_tree_index(layout), signals, None, peak)


def _cell_rng(seed, rate, trial):
    return np.random.default_rng([int(seed), int(round(rate * 1e6)),
                                  int(trial)])


def _cell_data(cfg, src, rate, trial):
    """Ground-truth coefficients and the sensing ensemble of one cell."""
    rng = _cell_rng(cfg.seed, rate, trial)
    if src.signals is None:
        truth = synth_jsm1(src.layout, cfg.K, cfg.common_sparsity,
                           cfg.innov_sparsity, src.hp_data, rng).theta
    else:
        truth = src.to_coeffs(src.signals)
    return truth, make_ensemble(truth, rate, rng, snr_db=cfg.snr_db)


def _quality(src, est, truth):
    if src.signals is None:
        peak = float(np.max(np.abs(truth))) or 1.0
        return nmse(est, truth), psnr(est, truth, peak)
    est_sig = src.to_signals(est)
    true_sig = src.signals
    if src.grid_shape is not None:
        whole_est = block_join(list(est_sig), src.grid_shape)
        whole_true = block_join(list(true_sig), src.grid_shape)
        return nmse(est_sig, true_sig), psnr(whole_est, whole_true, 1.0)
    return nmse(est_sig, true_sig), psnr(est_sig, true_sig, src.peak)


def _trace_rows(rate, trial, trace):
    out = []
    for row in trace:
        resid = [v for k, v in row.items() if k.startswith("residual_")]
        out.append({
            "rate": rate, "trial": trial, "iteration": row["iteration"],
            "nmse": row.get("nmse", math.nan),
            "elbo": row.get("elbo", math.nan),
            "residual_mean": float(np.mean(resid)) if resid else math.nan,
            "consensus_rounds": row.get("consensus_rounds", 0),
            "message_bytes": row.get("message_bytes", 0)})
    return out


def _solve(cfg, src, variant, ens, truth, topology):
    hp = cfg.hyperparams(src.layout, variant.structured, variant.slab)
    if variant.engine == "centralized":
        est, _, trace = run_centralized(ens, src.tree, hp, cfg.vb_config(),
                                        truth=truth)
        return est, trace, 0
    est, _, trace = run_decentralized(ens, topology, src.tree, hp,
                                      cfg.vb_config(),
                                      cfg.decentralized_config(), truth=truth)
    return est, trace, trace[-1]["message_bytes"] if trace else 0


def _aggregate(rows):
    out = []
    keys = []
    for r in rows:
        if (r.variant, r.rate) not in keys:
            keys.append((r.variant, r.rate))
    for variant, rate in keys:
        sel = [r for r in rows if r.variant == variant and r.rate == rate]
        mean = lambda a: float(np.mean([getattr(r, a) for r in sel]))
        out.append(MetricRow(variant, rate, "mean", mean("iterations"),
                             mean("nmse"), mean("psnr"), mean("wall_time"),
                             mean("message_bytes")))
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(cfg, output_dir=None):
    """Run every cell of ``cfg`` and write the artifacts.

    Returns the list of :class:`MetricRow` (per-trial rows followed by the
    aggregate rows), in the order they appear in ``results.csv``.
    """
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    src = _make_source(cfg)
    K = cfg.K if src.signals is None else src.signals.shape[0]
    needs_graph = any(v.engine == "decentralized" for v in cfg.variants)
    topology = build_topology(cfg.topology, K) if needs_graph else None

    rows = []
    traces = {v.name: [] for v in cfg.variants}
    for rate in cfg.rates:
        for trial in range(cfg.trials):
            truth, ens = _cell_data(cfg, src, rate, trial)
            for variant in cfg.variants:
                t0 = time.perf_counter()
                try:
                    est, trace, nbytes = _solve(cfg, src, variant, ens, truth,
                                                topology)
                except Exception as exc:
                    raise ExperimentError(variant.name, rate, trial,
                                          exc) from exc
                wall = time.perf_counter() - t0 if cfg.timing else 0.0
                err, quality = _quality(src, est, truth)
                rows.append(MetricRow(variant.name, rate, trial, len(trace),
                                      err, quality, wall, nbytes))
                traces[variant.name].extend(_trace_rows(rate, trial, trace))
    # canonical order: variant as configured, then rate, then trial
    order = {v.name: i for i, v in enumerate(cfg.variants)}
    rows.sort(key=lambda r: (order[r.variant], r.rate, r.trial))
    rows = rows + _aggregate(rows)

    _write_csv(out / "results.csv", RESULT_COLUMNS, [r.cells() for r in rows])
    header = "".join(f"# {line}\n" for line in src.layout.to_text().splitlines())
    for name, trows in traces.items():
        with open(out / f"trace_{name}.csv", "w", newline="") as fh:
            fh.write(header)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for t in trows:
                w.writerow([_fmt(t[c]) for c in TRACE_COLUMNS])
    if cfg.plots:
        _write_plots(out / "plots", rows, traces, cfg)
    _write_manifest(out / "manifest.txt", cfg)
    return rows


def _write_plots(folder, rows, traces, cfg):
    folder.mkdir(exist_ok=True)
    agg = [r for r in rows if r.trial == "mean"]
    for metric, logy in (("nmse", True), ("psnr", False)):
        series = {}
        for v in cfg.variants:
            sel = [r for r in agg if r.variant == v.name]
            series[v.name] = ([r.rate for r in sel],
                              [getattr(r, metric) for r in sel])
        svg = line_chart_svg(series, title=f"{metric.upper()} against rate",
                             xlabel="sampling rate M/N",
                             ylabel=metric.upper() + (" (dB)" if metric ==
                                                      "psnr" else ""),
                             logy=logy)
        (folder / f"{metric}_vs_rate.svg").write_text(svg)
    rate = cfg.rates[-1]
    series = {}
    for name, trows in traces.items():
        sel = [t for t in trows if t["rate"] == rate and t["trial"] == 0]
        series[name] = ([t["iteration"] for t in sel],
                        [t["nmse"] for t in sel])
    svg = line_chart_svg(series, title=f"NMSE against iteration (rate {rate:g})",
                         xlabel="iteration", ylabel="NMSE", logy=True)
    (folder / "nmse_vs_iteration.svg").write_text(svg)


def _write_manifest(path, cfg):
    lines = ["# config", cfg.to_text().rstrip(), "# seed", str(cfg.seed),
             "# versions",
             f"dcsvb = {__version__}", f"python = {platform.python_version()}",
             f"numpy = {np.__version__}", f"scipy = {scipy.__version__}"]
    path.write_text("\n".join(lines) + "\n")
