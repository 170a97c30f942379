"""Command line entry point: ``dcsvb run|synth|solve|metrics|graph``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .consensus import harary_graph, save_edges
from .harness import (
    ConfigError,
    ExperimentError,
    build_topology,
    load_config,
    parse_variant,
    run_experiment,
)
from .imageio import load_pgm
from .jsm import (
    default_hyperparams,
    load_ensemble,
    load_state,
    make_ensemble,
    save_ensemble,
    save_state,
    synth_jsm1,
)
from .metrics import nmse, psnr
from .vb import VbConfig, run_centralized
from .decentralized import run_decentralized
from .wavelets import build_tree_index, make_layout


def layout_from_text(text):
    """Rebuild a layout from the ``key=value`` lines of ``to_text``."""
    kv = {}
    for line in text.splitlines():
        line = line.lstrip("# ").strip()
        if "=" in line:
            k, v = line.split("=", 1)
            kv.setdefault(k.strip(), v.strip())
    try:
        return make_layout(int(kv["side"]), int(kv["levels"]),
                           int(kv["ndim"]), kv.get("wavelet", "db4"))
    except KeyError as exc:
        raise ValueError(f"layout description lacks {exc}") from None


def load_signals(path):
    """Signals from a state file, a graymap or a plain numeric table.

    Tables hold one signal per row, separated by commas or whitespace.
    """
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return load_pgm(path, require_dyadic=False)
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# format jsm_state"):
        return load_state(path).theta
    delim = "," if "," in first else None
    return np.loadtxt(path, delimiter=delim, ndmin=2)


def _cmd_run(args):
    cfg = load_config(args.config)
    rows = run_experiment(cfg, args.out)
    for r in rows:
        if r.trial == "mean":
            print(f"{r.variant} rate={r.rate:g} nmse={r.nmse:.4g} "
                  f"psnr={r.psnr:.4g} iterations={r.iterations:g}")
    return 0


def _cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layout = make_layout(args.side, args.levels, args.ndim, args.wavelet)
    hp = default_hyperparams(layout, structured=not args.unstructured)
    rng = np.random.default_rng(args.seed)
    truth = synth_jsm1(layout, args.k, args.common, args.innov, hp, rng)
    ens = make_ensemble(truth.theta, args.rate, rng, snr_db=args.snr)
    save_state(out / "truth.txt", truth)
    save_ensemble(out / "ensemble.txt", ens)
    (out / "layout.txt").write_text(layout.to_text() + "\n")
    print(f"wrote {out}/truth.txt, ensemble.txt and layout.txt "
          f"(K={ens.K}, N={ens.N}, M={ens.M[0]})")
    return 0


def _cmd_solve(args):
    ens = load_ensemble(args.ensemble)
    layout = layout_from_text(Path(args.layout).read_text())
    tree = build_tree_index(layout)
    variant = parse_variant(args.variant)
    hp = default_hyperparams(layout, variant.structured, variant.slab)
    cfg = VbConfig(max_iter=args.max_iter)
    if variant.engine == "centralized":
        theta, _, trace = run_centralized(ens, tree, hp, cfg)
    else:
        topo = build_topology(args.topology, ens.K)
        theta, _, trace = run_decentralized(ens, topo, tree, hp, cfg)
    np.savetxt(args.out, theta, fmt="%.17g")
    print(f"{variant.name}: {len(trace)} iterations, wrote {args.out}")
    return 0


def _cmd_metrics(args):
    est = load_signals(args.est)
    truth = load_signals(args.truth)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    peak = args.peak if args.peak is not None else \
        float(np.max(np.abs(truth))) or 1.0
    if truth.ndim == 2 and Path(args.truth).suffix.lower() == ".pgm":
        print(f"nmse = {nmse(est[None], truth[None]):.10g}")
    else:
        print(f"nmse = {nmse(est, truth):.10g}")
    print(f"psnr = {psnr(est, truth, peak):.10g}")
    return 0


def _cmd_graph(args):
    topo = harary_graph(args.k, args.p)
    save_edges(args.out, topo)
    print(f"Harary graph K={args.k} P={args.p}: {len(topo.edges)} edges "
          f"written to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="dcsvb",
        description="Variational Bayesian distributed compressed sensing")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="draw a synthetic JSM-1 instance")
    s.add_argument("--out", required=True)
    s.add_argument("--side", type=int, default=16)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--ndim", type=int, default=2, choices=(1, 2))
    s.add_argument("--wavelet", default="db4", choices=("db4", "haar"))
    s.add_argument("--k", type=int, default=4)
    s.add_argument("--rate", type=float, default=0.5)
    s.add_argument("--common", type=float, default=0.1)
    s.add_argument("--innov", type=float, default=0.05)
    s.add_argument("--snr", type=float, default=40.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--unstructured", action="store_true",
                   help="draw supports without tree structure")
    s.set_defaults(func=_cmd_synth)

    v = sub.add_parser("solve", help="recover signals from an ensemble file")
    v.add_argument("--ensemble", required=True)
    v.add_argument("--layout", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--variant", default="centralized-structured-bkf")
    v.add_argument("--topology", default="harary:5")
    v.add_argument("--max-iter", type=int, default=100)
    v.set_defaults(func=_cmd_solve)

    m = sub.add_parser("metrics", help="NMSE and PSNR of an estimate")
    m.add_argument("--est", required=True)
    m.add_argument("--truth", required=True)
    m.add_argument("--peak", type=float,
                   help="PSNR peak (default: largest absolute true value)")
    m.set_defaults(func=_cmd_metrics)

    g = sub.add_parser("graph", help="write a Harary graph edge list")
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_graph)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ExperimentError, ValueError, OSError) as exc:
        print(f"dcsvb {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
