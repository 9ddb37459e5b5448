"""Command-line front end: dataset generation, detection, |I| sweeps, dynamics
traces and eigenvector selection.

Every command accepts the group-level ``--config FILE`` (JSON). Keys are option
names with underscores, either flat or nested under the command name
(``{"detect": {"i_size": 40}}``); flags given on the command line win. Each
command writes ``<output>.json`` holding the effective parameters.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .datagen import (
    gen_circle_clusters,
    make_rng,
    patch_dataset,
    read_points_csv,
    subsample,
    write_pgm,
    write_points_csv,
)
from .diagnostics import initial_spectrum, theory_report, trace_dynamics, verify_prop31
from .errors import NumericError, ValidationError
from .graph import Partition, build_affinity
from .metrics import f1_score
from .norm import WeightSpec, detect, embedding_norm, render_on_centers, select_eigvecs, sweep_i, write_norm_csv
from .spectral import markov_spectrum

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except NumericError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            ctx.exit(EXIT_NUMERIC)


def _default_map(cfg: dict, group: click.Group) -> dict:
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    out = {}
    for name, cmd in group.commands.items():
        own = cfg.get(name, {}) if isinstance(cfg.get(name), dict) else {}
        if isinstance(cmd, click.Group):
            out[name] = _default_map({**flat, **own}, cmd)
        else:
            out[name] = {**flat, **own}
    return out


def _sidecar(ctx: click.Context, target: Path) -> None:
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(ctx.params.items())}
    record = {"command": ctx.command_path, "version": __version__, "params": params}
    side = target / "config.json" if target.is_dir() else target.with_suffix(target.suffix + ".json")
    side.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _k_st(ctx, cloud, k_st):
    # patch data defaults to the image setting, point clouds to the toy setting
    if k_st is None:
        k_st = 32 if cloud.centers is not None else 8
    ctx.params["k_st"] = k_st
    return k_st


def _spectrum(ctx, cloud, k_nn, k_st, dense, m, method):
    g = build_affinity(cloud.points, k_nn, _k_st(ctx, cloud, k_st), dense=dense)
    return g, markov_spectrum(g, m, method)


def _out_path(out: Path) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


graph_options = [
    click.option("--k-nn", default=64, show_default=True, help="Neighbours kept per node."),
    click.option("--k-st", type=int, default=None,
                 help="Neighbour rank setting the local scale [default: 32 for patch data, else 8]."),
    click.option("--dense/--sparse", default=False, show_default=True, help="Keep every pair instead of kNN edges."),
    click.option("--method", type=click.Choice(["auto", "lanczos", "dense"]), default="auto", show_default=True),
    click.option("--labeled", is_flag=True, help="Headerless input whose last column is a label."),
]


def with_graph_options(fn):
    for opt in reversed(graph_options):
        fn = opt(fn)
    return fn


def _weight(_ctx, _param, value):
    try:
        return WeightSpec.parse(value) if isinstance(value, str) else value
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None


@click.group(cls=_Group)
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="JSON file with option defaults.")
@click.pass_context
def main(ctx, config_path):
    """Cluster extraction from background by the spectral embedding norm."""
    if config_path is not None:
        try:
            cfg = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise click.BadParameter(f"{config_path}: {exc}", param_hint="--config") from None
        ctx.default_map = _default_map(cfg, main)


@main.group(cls=_Group)
def gen():
    """Generate synthetic datasets."""


@gen.command("toy")
@click.option("--n", default=5000, show_default=True)
@click.option("--k", "k_clusters", default=10, show_default=True, help="Number of clusters.")
@click.option("--delta", default=0.1, show_default=True, help="Fraction of cluster points.")
@click.option("--eps-b", default=0.01, show_default=True, help="Background noise level.")
@click.option("--eps-c", default=0.02, show_default=True, help="Cluster spread.")
@click.option("--center-radius", default=1.1, show_default=True, help="Radius of the cluster centres.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default="toy.csv", show_default=True)
@click.pass_context
def gen_toy(ctx, n, k_clusters, delta, eps_b, eps_c, center_radius, seed, out):
    """Noisy unit circle plus Gaussian clusters."""
    cloud = gen_circle_clusters(n, k_clusters, delta, eps_b, eps_c, seed, center_radius)
    write_points_csv(cloud, _out_path(out))
    _sidecar(ctx, out)
    click.echo(json.dumps({"n": cloud.n, "positives": int(cloud.truth.sum()), "out": str(out)}))


@gen.command("image")
@click.option("--resolution", default=200, show_default=True)
@click.option("--patch", default=9, show_default=True)
@click.option("--stride", default=3, show_default=True)
@click.option("--delta", default=0.01, show_default=True, help="Fraction of patches labelled anomalous.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default="patches.csv", show_default=True)
@click.pass_context
def gen_image(ctx, resolution, patch, stride, delta, out):
    """Striped image with a bump, cut into labelled patches (also writes a PGM)."""
    img, cloud = patch_dataset(resolution, patch, stride, delta)
    write_points_csv(cloud, _out_path(out))
    write_pgm(img.pixels, out.with_suffix(".pgm"))
    _sidecar(ctx, out)
    click.echo(json.dumps({"n": cloud.n, "positives": int(cloud.truth.sum()), "out": str(out)}))


@main.command("detect")
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@with_graph_options
@click.option("--i-size", default=40, show_default=True, help="Number of leading eigenvectors summed.")
@click.option("--weight", default="constant", show_default=True, callback=_weight,
              help="constant, power:P or heat:S.")
@click.option("--quantile", default=0.99, show_default=True, help="Threshold quantile of S.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default="norm.csv", show_default=True)
@click.pass_context
def cmd_detect(ctx, data, k_nn, k_st, dense, method, labeled, i_size, weight, quantile, out):
    """Embedding norm and thresholded detection; prints metrics when labels exist."""
    cloud = read_points_csv(data, labeled=labeled)
    _, es = _spectrum(ctx, cloud, k_nn, k_st, dense, i_size, method)
    nr = detect(embedding_norm(es, i_size, weight), quantile)
    write_norm_csv(nr, _out_path(out))
    if cloud.centers is not None:
        write_pgm(render_on_centers(nr.s, cloud.centers), out.with_suffix(".pgm"))
    ctx.params["weight"] = str(weight)
    _sidecar(ctx, out)
    if cloud.truth is not None:
        click.echo(f1_score(nr.predicted, cloud.truth).to_json())


def _trial(args):
    points, truth, k_nn, k_st, dense, method, i_min, i_max, weight, quantile = args
    g = build_affinity(points, k_nn, k_st, dense=dense)
    es = markov_spectrum(g, i_max, method)
    return [r.f1 for r in sweep_i(es, i_min, i_max, weight, quantile, truth)]


def trial_seeds(seed: int, trials: int) -> list[int]:
    """Independent per-trial seeds derived from one master seed."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


@main.command("sweep")
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@with_graph_options
@click.option("--i-min", default=2, show_default=True)
@click.option("--i-max", default=100, show_default=True)
@click.option("--weight", default="constant", show_default=True, callback=_weight)
@click.option("--quantile", default=0.99, show_default=True)
@click.option("--trials", default=1, show_default=True)
@click.option("--subsample", "sub_size", type=int, default=None, help="Points drawn per trial (default: all).")
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True, help="Parallel worker processes.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default="sweep.csv", show_default=True)
@click.pass_context
def cmd_sweep(ctx, data, k_nn, k_st, dense, method, labeled, i_min, i_max, weight, quantile, trials, sub_size,
              seed, workers, out):
    """Mean and standard deviation of F1 for every |I| in a range."""
    cloud = read_points_csv(data, labeled=labeled)
    if cloud.truth is None:
        raise ValidationError(f"{data}: sweeping needs a truth column")
    if trials < 1 or workers < 1:
        raise ValidationError("trials and workers must be >= 1")
    k_st = _k_st(ctx, cloud, k_st)
    jobs = []
    for s in trial_seeds(seed, trials):
        part = cloud if sub_size is None else subsample(cloud, sub_size, make_rng(s))
        jobs.append((part.points, part.truth, k_nn, k_st, dense, method, i_min, i_max, weight, quantile))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            f1 = np.array(list(pool.map(_trial, jobs)))
    else:
        f1 = np.array([_trial(j) for j in jobs])
    mean, std = f1.mean(axis=0), f1.std(axis=0)
    sizes = np.arange(i_min, i_max + 1)
    out = _out_path(out)
    np.savetxt(out, np.column_stack([sizes, mean, std]), delimiter=",", header="i_size,mean_f1,std_f1",
               comments="", fmt=["%d", "%.17g", "%.17g"])
    ctx.params["weight"] = str(weight)
    _sidecar(ctx, out)
    best = int(np.argmax(mean))
    click.echo(json.dumps({"i_size": int(sizes[best]), "mean_f1": float(mean[best]), "std_f1": float(std[best])}))


@main.command("dynamics")
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@with_graph_options
@click.option("--t-steps", default=21, show_default=True)
@click.option("--m", default=8, show_default=True, help="Eigenvalue branches reported.")
@click.option("--i-size", default=40, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default="dynamics", show_default=True)
@click.pass_context
def cmd_dynamics(ctx, data, k_nn, k_st, dense, method, labeled, t_steps, m, i_size, out_dir):
    """Trace the spectrum from the split graph (t=0) to the observed one (t=1)."""
    cloud = read_points_csv(data, labeled=labeled)
    if cloud.truth is None:
        raise ValidationError(f"{data}: the cluster/background split needs a truth column")
    part = Partition.from_truth(cloud.truth, cloud.cluster_id)
    g = build_affinity(cloud.points, k_nn, _k_st(ctx, cloud, k_st), dense=dense)
    pair, es0 = initial_spectrum(g, part, max(m, i_size + 1))
    trace = trace_dynamics(pair, part, t_steps, m, i_size, method)
    report = theory_report(g, part, es0, i_size)
    violations: list = []
    prop_ok = verify_prop31(es0, part, report, i_size, violations)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace.write_csvs(out_dir)
    (out_dir / "theory.json").write_text(report.to_json() + "\n", encoding="utf-8")
    s1 = trace.s_series[:, -1]
    summary = {
        "drift_ok": trace.drift_ok,
        "max_drift_ratio": trace.max_drift_ratio,
        "gap_premise": trace.gap_premise,
        "gap_preserved": trace.gap_preserved,
        "overlap_floor": float(trace.overlap_floor.min()),
        "initial_bounds_ok": prop_ok,
        "initial_bound_violations": violations,
        "margin_t1": float(s1[part.cluster_mask].min() - s1[part.background_mask].max()),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _sidecar(ctx, out_dir)
    click.echo(json.dumps(summary))


@main.command("select")
@click.argument("data", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@with_graph_options
@click.option("--i-size", default=40, show_default=True)
@click.option("--count", default=5, show_default=True, help="Eigenvectors to select.")
@click.option("--m", type=int, default=None, help="Spectrum size searched [default: max(i-size, count)].")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default="select", show_default=True)
@click.pass_context
def cmd_select(ctx, data, k_nn, k_st, dense, method, labeled, i_size, count, m, out_dir):
    """Eigenvectors largest in magnitude where the embedding norm peaks."""
    cloud = read_points_csv(data, labeled=labeled)
    m = max(i_size, count) if m is None else m
    _, es = _spectrum(ctx, cloud, k_nn, k_st, dense, m, method)
    nr = embedding_norm(es, i_size)
    picked = select_eigvecs(es, nr, count)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cloud.centers is not None:
        for k in picked:
            write_pgm(render_on_centers(es.eigenvectors[:, k], cloud.centers), out_dir / f"eigvec_{k + 1}.pgm")
    record = {"node": int(np.argmax(nr.s)), "indices": picked, "eigvec_numbers": [k + 1 for k in picked]}
    (out_dir / "selected.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    _sidecar(ctx, out_dir)
    click.echo(json.dumps(record))


if __name__ == "__main__":
    sys.exit(main())
