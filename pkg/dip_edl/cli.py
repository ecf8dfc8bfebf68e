import functools
import logging
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import click
from pydantic import ValidationError

from dip_edl import __version__
from dip_edl.config import RunConfig, parse_config
from dip_edl.constants import EXIT_VALIDATION, EXIT_VERIFICATION, VERIFY_FILE
from dip_edl.errors import DIPError
from dip_edl.models import MetricsReport
from dip_edl.services.datasets import read_dataset
from dip_edl.services.pipeline import cmd_ablate, cmd_eval, cmd_train
from dip_edl.services.verification import run_verification, write_verification

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@contextmanager
def _user_errors() -> Iterator[None]:
    """Turn library validation failures into a one-line message and exit status 1."""
    try:
        yield
    except (DIPError, ValidationError) as e:
        click.echo(f"Error: {e}", err=True)
        raise SystemExit(EXIT_VALIDATION)


def run_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Shared --config/--set/--out/--seed flags; the wrapped command receives a resolved ``RunConfig``."""

    @click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="key=value config file")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override one config key (repeatable)")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory")
    @click.option("--seed", type=int, default=None, help="Random seed")
    @functools.wraps(func)
    def wrapper(config_path: Path | None, overrides: tuple[str, ...], out_dir: Path | None, seed: int | None, **kwargs: Any) -> Any:
        with _user_errors():
            config = parse_config(config_path, overrides, seed=seed, out_dir=out_dir)
        return func(config, **kwargs)

    return wrapper


def _echo_report(report: MetricsReport) -> None:
    for name, value in report.model_dump().items():
        click.echo(f"  {name:<15} {value:.4f}" if isinstance(value, float) else f"  {name:<15} {value}")


@click.group()
@click.version_option(__version__, prog_name="dipedl")
@click.option("--verbose", "-v", is_flag=True, help="Log debug output to stderr")
def cli(verbose: bool) -> None:
    """DIP-EDL: evidential classifiers with density-informed pseudo-counts."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format=LOG_FORMAT)


@cli.command()
@run_options
def train(config: RunConfig) -> None:
    """Train a model and write its checkpoints and training log."""
    with _user_errors():
        written = cmd_train(config)
    for path in written:
        click.echo(f"Wrote {path}")


@cli.command("eval")
@run_options
@click.option("--checkpoints", type=click.Path(file_okay=False, path_type=Path), default=None, help="Checkpoint directory (defaults to --out)")
@click.option("--id-csv", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Labelled ID test set")
@click.option("--ood-csv", type=click.Path(dir_okay=False, path_type=Path), default=None, help="OOD set")
def eval_cmd(config: RunConfig, checkpoints: Path | None, id_csv: Path | None, ood_csv: Path | None) -> None:
    """Evaluate saved checkpoints on an ID/OOD pair."""
    with _user_errors():
        id_set = read_dataset(id_csv, config.n_classes) if id_csv else None
        ood_set = read_dataset(ood_csv) if ood_csv else None
        report = cmd_eval(config, checkpoints, id_set, ood_set)
    click.echo(f"Metrics ({config.mode.value}, score={config.score.value}):")
    _echo_report(report)


@cli.command()
@run_options
@click.option("--id-csv", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Labelled ID test set")
@click.option("--ood-csv", type=click.Path(dir_okay=False, path_type=Path), default=None, help="OOD set")
def ablate(config: RunConfig, id_csv: Path | None, ood_csv: Path | None) -> None:
    """Evaluate the DIP model under every n / DE / NN toggle combination."""
    with _user_errors():
        id_set = read_dataset(id_csv, config.n_classes) if id_csv else None
        ood_set = read_dataset(ood_csv) if ood_csv else None
        rows = cmd_ablate(config, id_set, ood_set)
    click.echo(f"{'n':>3} {'DE':>3} {'NN':>3}  {'acc':>7} {'BS':>7} {'AUROC':>7} {'AUPR':>7} {'OOD BS':>7}")
    for (use_n, use_de, use_nn), r in rows:
        marks = " ".join(f"{'y' if flag else '-':>3}" for flag in (use_n, use_de, use_nn))
        click.echo(f"{marks}  {r.accuracy:7.4f} {r.brier_id:7.4f} {r.auroc:7.4f} {r.aupr:7.4f} {r.brier_ood:7.4f}")


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True, help="Random seed")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Also write verify.csv here")
def verify(seed: int, out_dir: Path | None) -> None:
    """Run the numerical certificates; exit status 2 if any fails."""
    with _user_errors():
        results = run_verification(seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status}  {r.name:<30} {r.value:<12.4g} (bound {r.threshold:.4g})  {r.detail}")
    if out_dir is not None:
        write_verification(out_dir / VERIFY_FILE, results)
    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"{len(failed)} check(s) failed: {', '.join(failed)}", err=True)
        raise SystemExit(EXIT_VERIFICATION)
    click.echo(f"All {len(results)} checks passed.")


@cli.command("config")
@run_options
def config_cmd(config: RunConfig) -> None:
    """Show the resolved configuration in key=value form."""
    click.echo(config.to_text(), nl=False)
