"""``pca`` command line.

Exit codes: 0 success, 2 configuration error, 3 missing asset,
4 numerical failure (non-finite loss, failed gradient check).
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from ..errors import NumericalError, PCAError
from .config import KNOWLEDGE_MODES, PCAConfig


def _config(path: str | None) -> PCAConfig:
    return PCAConfig.load(path) if path else PCAConfig()


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Percept-Chat-Adapt knowledge-transfer pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("gen-synth")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="Synthetic task spec (JSON).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def gen_synth(spec_path: str | None, out: str) -> None:
    """Generate a synthetic dataset directory."""
    from .synth import SyntheticTaskSpec, generate_synthetic

    spec = SyntheticTaskSpec.load(spec_path) if spec_path else SyntheticTaskSpec()
    generate_synthetic(spec, out)
    click.echo(f"wrote synthetic dataset to {out}")


@cli.command("build-cache")
@click.option("--data", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--workers", default=1, show_default=True)
def build_cache(data: str, config_path: str | None, out: str, workers: int) -> None:
    """Run Percept + Chat over every sample and write the knowledge cache."""
    from .pipeline import build_knowledge_cache

    cache = build_knowledge_cache(data, _config(config_path), out, workers=workers)
    click.echo(f"cached {len(cache.entries)} samples in {out} (hash {cache.config_hash})")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(file_okay=False))
@click.option("--cache", required=True, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def train(config_path: str | None, data: str, cache: str, out: str) -> None:
    """Train a model; writes checkpoints and train_log.jsonl under --out."""
    from .train import run_training

    result = run_training(_config(config_path), data, cache, out)
    last = result.history[-1]
    click.echo(json.dumps({"checkpoint": str(result.checkpoint), "final_loss": result.final_loss,
                           "metrics": last.get("metrics")}, sort_keys=True))


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--split", required=True)
@click.option("--knowledge", type=click.Choice(KNOWLEDGE_MODES), default="both", show_default=True)
@click.option("--data", type=click.Path(file_okay=False), help="Defaults to the path stored in the checkpoint.")
@click.option("--cache", type=click.Path(file_okay=False), help="Defaults to the path stored in the checkpoint.")
@click.option("--scores-out", type=click.Path(dir_okay=False), help="Dump the score matrix (PCAK).")
def eval_cmd(checkpoint, split, knowledge, data, cache, scores_out) -> None:
    """Evaluate a checkpoint on one split."""
    from .evaluate import evaluate_model

    report = evaluate_model(checkpoint, split, cache, knowledge, data, scores_out)
    click.echo(json.dumps(report.to_dict(), sort_keys=True))


@cli.command()
@click.option("--axis", required=True, type=click.Choice(["variant", "sigma", "block-num", "query-dim", "knowledge"]))
@click.option("--values", required=True, help="Comma-separated values.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seeds", default=None, help="Comma-separated seeds to average over.")
def ablate(axis, values, config_path, data, out, seeds) -> None:
    """Train and evaluate one model per value of an ablation axis."""
    from .ablate import format_table, run_ablation

    seed_list = [int(s) for s in seeds.split(",")] if seeds else None
    rows = run_ablation(_config(config_path), axis, values, data, out, seeds=seed_list)
    click.echo(format_table(rows), nl=False)


@cli.command()
@click.option("--eps", default=1e-5, show_default=True)
@click.option("--tol", default=1e-4, show_default=True)
def gradcheck(eps: float, tol: float) -> None:
    """Finite-difference gradient check of every adapter variant and a depth-2 model."""
    from .gradsuite import run_suite

    reports = run_suite(eps, tol)
    for name, r in reports.items():
        click.echo(f"{'PASS' if r.passed else 'FAIL'} {name}: max rel err {r.worst:.3e}")
    if not all(r.passed for r in reports.values()):
        raise NumericalError("gradient check failed")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except PCAError as e:
        click.echo(f"error: {e}", err=True)
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except click.ClickException as e:
        e.show()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
