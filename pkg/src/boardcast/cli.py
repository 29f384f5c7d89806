"""Command-line entry point.

Subcommands cover the batch pipeline (synth, features, train, tune,
evaluate), the stream replay (replay), and the HTTP service (serve).
Settings come from an optional YAML config file; flags override it.
Exit codes: 0 success, 1 validation / usage error, 2 runtime failure.
"""

from __future__ import annotations

import json
import sys
import threading
from dataclasses import replace
from pathlib import Path

import click

from . import figures
from .api import create_app
from .config import RunConfig, load_config
from .dataset import WindowSpec
from .errors import BoardcastError, RuntimeFailure, ValidationError
from .evaluation import (
    leaderboard,
    write_extreme_csv,
    write_leaderboard_csv,
    write_metrics_json,
)
from .features import (
    DEFAULT_EXCLUSION,
    build_feature_table,
    clean_encounters,
    read_features,
    validate_feature_table,
    write_features,
)
from .models import FittedModel, TrainConfig
from .pipeline import (
    BASELINE_ALGORITHMS,
    MODEL_ALGORITHMS,
    PreparedData,
    score_baseline,
    score_on_test,
    train_model,
)
from .scenario import generate_corpus, read_corpus, write_corpus
from .service import MonitorConfig, PlatformService
from .storage import Store
from .timeutils import HOUR, iso
from .tuner import random_search, write_best_config_json, write_trials_csv

pass_config = click.make_pass_decorator(RunConfig)


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="YAML config file; flags override its values.")
@click.pass_context
def cli(ctx: click.Context, config_path: Path | None) -> None:
    """Hourly ED boarding-time forecasting: pipeline, replay, and service."""
    ctx.obj = load_config(config_path)


def _echo_config(cfg: RunConfig, command: str) -> None:
    click.echo(f"[{command}] resolved config: {json.dumps(cfg.describe(), sort_keys=True)}")


def model_artifact_path(model_dir: Path, algorithm: str, horizon: int) -> Path:
    return model_dir / f"{algorithm}_h{horizon}.json"


def _versioned_write(model: FittedModel, path: Path) -> str:
    """Write a model file without silently overwriting a different artifact."""
    payload = json.dumps(model.to_dict(), indent=2) + "\n"
    if path.exists():
        if path.read_text() == payload:
            return "unchanged"
        n = 1
        while path.with_name(f"{path.stem}.v{n}{path.suffix}").exists():
            n += 1
        path.rename(path.with_name(f"{path.stem}.v{n}{path.suffix}"))
        path.write_text(payload)
        return f"rotated previous to .v{n}"
    path.write_text(payload)
    return "created"


@cli.command()
@click.option("--seed", type=int, default=None, help="Scenario seed override.")
@click.option("--hours", type=int, default=None, help="Corpus length in hours from start_ts.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Corpus output directory.")
@pass_config
def synth(cfg: RunConfig, seed: int | None, hours: int | None, out_dir: Path | None) -> None:
    """Generate the synthetic corpus CSVs and manifest."""
    scenario = cfg.scenario
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    if hours is not None:
        if hours < 1:
            raise ValidationError("--hours must be >= 1")
        scenario = replace(scenario, end_ts=scenario.start_ts + hours * HOUR)
    cfg.scenario = scenario
    if out_dir is not None:
        cfg.corpus_dir = out_dir
    cfg.validate()
    _echo_config(cfg, "synth")

    corpus = generate_corpus(scenario)
    manifest = write_corpus(corpus, cfg.corpus_dir)
    click.echo(
        f"corpus written to {cfg.corpus_dir}: "
        f"{manifest['rows']['encounters']} encounters, "
        f"{manifest['rows']['context']} context hours, "
        f"{manifest['rows']['inpatient']} inpatient events (seed {scenario.seed})"
    )


@cli.command()
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@pass_config
def features(cfg: RunConfig, corpus_dir: Path | None, out_dir: Path | None) -> None:
    """Clean encounters and build features.csv plus the cleaning report."""
    if corpus_dir is not None:
        cfg.corpus_dir = corpus_dir
    if out_dir is not None:
        cfg.out_dir = out_dir
    _echo_config(cfg, "features")

    corpus = read_corpus(cfg.corpus_dir)
    kept, report = clean_encounters(corpus.encounters)
    start, end = corpus.config.start_ts, corpus.config.end_ts
    exclusions = []
    if start < DEFAULT_EXCLUSION[1] and end > DEFAULT_EXCLUSION[0]:
        exclusions.append(DEFAULT_EXCLUSION)
        report.excluded_hour_range = DEFAULT_EXCLUSION
    table = build_feature_table(
        kept, corpus.inpatient, corpus.context, start, end, exclusions=tuple(exclusions)
    )
    validate_feature_table(table)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_features(table, cfg.out_dir / "features.csv")
    (cfg.out_dir / "cleaning_report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n"
    )
    figures.render_boarding_trend(table, cfg.out_dir / "boarding_trend.png")
    click.echo(
        f"features.csv: {len(table)} hourly rows "
        f"(dropped {report.n_dropped_waiting} long waits, "
        f"{report.n_dropped_boarding} long boardings; "
        f"{report.dropped_fraction_waiting:.2f}% wait drops)"
    )


def _load_table(cfg: RunConfig, features_path: Path | None):
    path = features_path or (cfg.out_dir / "features.csv")
    if not Path(path).exists():
        raise ValidationError(f"features file not found: {path} (run `boardcast features`)")
    return read_features(path)


@cli.command()
@click.option("--features", "features_path", type=click.Path(path_type=Path), default=None)
@click.option("--algorithm", "algorithms", multiple=True,
              type=click.Choice(MODEL_ALGORITHMS), default=MODEL_ALGORITHMS)
@click.option("--horizon", "horizons", multiple=True, type=int, default=None)
@click.option("--seed", type=int, default=None, help="Training seed override.")
@click.option("--out", "model_dir", type=click.Path(path_type=Path), default=None)
@pass_config
def train(cfg: RunConfig, features_path: Path | None, algorithms: tuple[str, ...],
          horizons: tuple[int, ...], seed: int | None, model_dir: Path | None) -> None:
    """Train one model per (algorithm, horizon) and write model files."""
    if model_dir is not None:
        cfg.model_dir = model_dir
    if horizons:
        cfg.horizons = tuple(sorted(set(horizons)))
    if seed is not None:
        cfg.train = replace(cfg.train, seed=seed)
    cfg.validate()
    _echo_config(cfg, "train")

    table = _load_table(cfg, features_path)
    cfg.model_dir.mkdir(parents=True, exist_ok=True)
    for horizon in cfg.horizons:
        spec = WindowSpec(lag=cfg.window.lag, horizon=horizon,
                          target_column=cfg.window.target_column)
        prepared = PreparedData(table, spec, cfg.split)
        for algorithm in algorithms:
            model = train_model(prepared, algorithm, cfg.train)
            path = model_artifact_path(cfg.model_dir, algorithm, horizon)
            outcome = _versioned_write(model, path)
            m = model.metrics
            click.echo(
                f"{algorithm} h={horizon}: val MAE {m['mae']:.1f} min, "
                f"RMSE {m['rmse']:.1f}, epochs {len(model.history.val_loss)} "
                f"-> {path.name} ({outcome})"
            )


@cli.command()
@click.option("--features", "features_path", type=click.Path(path_type=Path), default=None)
@click.option("--algorithm", type=click.Choice(MODEL_ALGORITHMS), default="nlinear")
@click.option("--horizon", type=int, default=6)
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@pass_config
def tune(cfg: RunConfig, features_path: Path | None, algorithm: str, horizon: int,
         trials: int | None, seed: int, out_dir: Path | None) -> None:
    """Random-search hyperparameters for one algorithm and horizon."""
    if out_dir is not None:
        cfg.out_dir = out_dir
    n_trials = trials if trials is not None else cfg.n_trials
    _echo_config(cfg, "tune")

    table = _load_table(cfg, features_path)
    spec = WindowSpec(lag=cfg.window.lag, horizon=horizon,
                      target_column=cfg.window.target_column)
    prepared = PreparedData(table, spec, cfg.split)
    best, all_trials = random_search(
        algorithm, cfg.search, prepared.train, prepared.val,
        n_trials=n_trials, seed=seed, base_config=cfg.train,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_trials_csv(all_trials, cfg.out_dir / "trials.csv")
    write_best_config_json(algorithm, best, cfg.out_dir / "best_config.json")
    statuses = {s: sum(1 for t in all_trials if t.status == s)
                for s in ("completed", "pruned", "failed")}
    click.echo(
        f"tuning {algorithm} h={horizon}: best trial {best.trial_id} "
        f"val loss {best.final_val_loss:.6f} ({statuses['completed']} completed, "
        f"{statuses['pruned']} pruned, {statuses['failed']} failed)"
    )


@cli.command()
@click.option("--features", "features_path", type=click.Path(path_type=Path), default=None)
@click.option("--models", "model_dir", type=click.Path(path_type=Path), default=None)
@click.option("--horizon", "horizons", multiple=True, type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@pass_config
def evaluate(cfg: RunConfig, features_path: Path | None, model_dir: Path | None,
             horizons: tuple[int, ...], out_dir: Path | None) -> None:
    """Score trained models and baselines; write leaderboard, reports, figures."""
    if model_dir is not None:
        cfg.model_dir = model_dir
    if out_dir is not None:
        cfg.out_dir = out_dir
    if horizons:
        cfg.horizons = tuple(sorted(set(horizons)))
    cfg.validate()
    _echo_config(cfg, "evaluate")

    missing = [
        str(model_artifact_path(cfg.model_dir, algorithm, horizon))
        for horizon in cfg.horizons
        for algorithm in MODEL_ALGORITHMS
        if not model_artifact_path(cfg.model_dir, algorithm, horizon).exists()
    ]
    if missing:
        raise ValidationError(
            "missing model artifacts (run `boardcast train`): " + ", ".join(missing)
        )

    table = _load_table(cfg, features_path)
    results = []
    extreme_reports = []
    for horizon in cfg.horizons:
        spec = WindowSpec(lag=cfg.window.lag, horizon=horizon,
                          target_column=cfg.window.target_column)
        prepared = PreparedData(table, spec, cfg.split)
        if len(prepared.test) == 0:
            raise RuntimeFailure(f"no test windows at horizon {horizon}; corpus too short")
        for algorithm in MODEL_ALGORITHMS:
            model = FittedModel.load(model_artifact_path(cfg.model_dir, algorithm, horizon))
            metrics, extreme = score_on_test(prepared, model)
            results.append((algorithm, horizon, metrics))
            extreme_reports.append((algorithm, horizon, extreme))
        for algorithm in BASELINE_ALGORITHMS:
            metrics, extreme = score_baseline(prepared, algorithm)
            results.append((algorithm, horizon, metrics))
            extreme_reports.append((algorithm, horizon, extreme))

    board = leaderboard(results)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_leaderboard_csv(board, cfg.out_dir / "leaderboard.csv")
    write_extreme_csv(extreme_reports, cfg.out_dir / "extreme_report.csv")
    write_metrics_json(board, extreme_reports, cfg.out_dir / "metrics.json")
    figures.render_leaderboard_figure(board, cfg.out_dir / "leaderboard.png")
    figures.render_extreme_figure(extreme_reports, cfg.out_dir / "extreme_levels.png")
    for horizon in board.horizons():
        best = board.best_for(horizon)
        click.echo(f"h={horizon}: best {best.algorithm} (MAE {best.metrics.mae:.1f} min)")
    click.echo(f"reports and figures written to {cfg.out_dir}")


@cli.command()
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), default=None)
@click.option("--store", "store_path", type=click.Path(path_type=Path), default=None)
@click.option("--models", "model_dir", type=click.Path(path_type=Path), default=None)
@click.option("--monitor/--no-monitor", default=False,
              help="Run the hourly monitoring cycle during replay.")
@click.option("--worker/--no-worker", default=False,
              help="Drain retrain jobs inline after each monitored hour.")
@pass_config
def replay(cfg: RunConfig, corpus_dir: Path | None, store_path: Path | None,
           model_dir: Path | None, monitor: bool, worker: bool) -> None:
    """Replay a corpus through the streaming pipeline into the store."""
    if corpus_dir is not None:
        cfg.corpus_dir = corpus_dir
    if store_path is not None:
        cfg.store_path = store_path
    if model_dir is not None:
        cfg.model_dir = model_dir
    _echo_config(cfg, "replay")

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    corpus = read_corpus(cfg.corpus_dir)
    service = PlatformService(
        Store(cfg.resolved_store_path()),
        model_dir=cfg.model_dir,
        horizons=cfg.horizons,
        monitor_config=cfg.monitor,
        train_config=cfg.train,
        window_spec=cfg.window,
        split_spec=cfg.split,
    )
    service.load_corpus(corpus)
    rows = service.run_replay(monitor=monitor, run_worker=worker)
    click.echo(
        f"replayed {rows} hourly rows into {cfg.resolved_store_path()}"
        + (f"; jobs: {len(service.store.list_jobs())}" if monitor else "")
    )


@cli.command()
@click.option("--store", "store_path", type=click.Path(path_type=Path), default=None)
@click.option("--models", "model_dir", type=click.Path(path_type=Path), default=None)
@click.option("--port", type=int, default=None)
@click.option("--token", type=str, default=None)
@click.option("--replay-corpus", "replay_corpus", type=click.Path(path_type=Path), default=None,
              help="Also replay this corpus (with monitoring and worker) in the background.")
@pass_config
def serve(cfg: RunConfig, store_path: Path | None, model_dir: Path | None,
          port: int | None, token: str | None, replay_corpus: Path | None) -> None:
    """Serve the HTTP API (and optionally the replay + monitoring loops)."""
    import uvicorn

    if store_path is not None:
        cfg.store_path = store_path
    if model_dir is not None:
        cfg.model_dir = model_dir
    if port is not None:
        cfg.port = port
    if token is not None:
        cfg.token = token
    _echo_config(cfg, "serve")

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    service = PlatformService(
        Store(cfg.resolved_store_path()),
        model_dir=cfg.model_dir,
        horizons=cfg.horizons,
        monitor_config=cfg.monitor,
        train_config=cfg.train,
        window_spec=cfg.window,
        split_spec=cfg.split,
    )
    if replay_corpus is not None:
        corpus = read_corpus(Path(replay_corpus))
        service.load_corpus(corpus)

        def replay_loop() -> None:
            service.run_replay(monitor=True, run_worker=True)

        threading.Thread(target=replay_loop, daemon=True, name="replay").start()
        click.echo(f"background replay started from {replay_corpus}")

    app = create_app(service, token=cfg.token)
    click.echo(f"serving on http://127.0.0.1:{cfg.port}/api (token {'set' if cfg.token else 'off'})")
    uvicorn.run(app, host="127.0.0.1", port=cfg.port, log_level="warning")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:  # includes UsageError: show usage, exit 1
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 130
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except BoardcastError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # unexpected runtime failure
        click.echo(f"unexpected failure: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
