"""
Dataset and meta-network handlers: collect a training set, train a checkpoint, evaluate it.
"""

from pathlib import Path
from typing import Optional

import click
import structlog

from app.handlers.common_handlers import EXISTING_FILE, echo_json, handle_errors, run_async
from app.services.harness_service import HarnessService
from app.services.metanet_service import MetaNetService
from app.storage.repositories.dataset_repo import DatasetRepository
from app.storage.repositories.scenario_repo import ScenarioRepository

logger = structlog.get_logger(__name__)
router = click.Group()


@router.command()
@click.option("--spec", "spec_path", type=EXISTING_FILE, required=True, help="Collection spec JSON")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Dataset JSONL")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for label noise")
@click.option("--workers", "pool_workers", type=int, default=None, help="Process pool size (0 = inline)")
@handle_errors
def collect(spec_path: Path, out_path: Path, seed: int, pool_workers: Optional[int]):
    """Sweep the simulator and write one training sample per metrics group."""
    spec = ScenarioRepository().load_collect_spec(spec_path)
    harness_service = HarnessService()
    samples = run_async(harness_service.collect_dataset(spec, out_path, seed=seed, pool_workers=pool_workers))
    click.echo(f"{len(samples)} samples written to {out_path}")


@router.command("train-meta")
@click.option("--data", "data_path", type=EXISTING_FILE, required=True, help="Dataset JSONL")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Checkpoint file")
@click.option("--epochs", type=click.IntRange(min=0), default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--holdout", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.1, show_default=True,
              help="Share of environments held out for evaluation")
@handle_errors
def train_meta(data_path: Path, out_path: Path, epochs: Optional[int], lr: Optional[float], seed: int,
               holdout: float):
    """Train the meta-network offline and save a checkpoint."""
    metanet_service = MetaNetService()
    samples = DatasetRepository().load(data_path)
    train, test = metanet_service.split_by_environment(samples, holdout, seed=seed)
    params = metanet_service.train_offline(train, epochs=epochs, lr=lr, seed=seed)
    metanet_service.save_checkpoint(out_path, params)
    report = {"checkpoint": str(out_path), "train_samples": len(train), "heldout_samples": len(test),
              "loss_history": list(params.loss_history)}
    if test:
        report["heldout"] = metanet_service.evaluate(params, test)
        report["heldout"]["selection_agreement"] = metanet_service.selection_agreement(params, test)
        report["heldout"]["exact_agreement"] = metanet_service.selection_agreement(params, test, tolerance=0.0)
    echo_json(report)


@router.command("eval-meta")
@click.option("--data", "data_path", type=EXISTING_FILE, required=True, help="Dataset JSONL")
@click.option("--params", "params_path", type=EXISTING_FILE, required=True, help="Checkpoint file")
@handle_errors
def eval_meta(data_path: Path, params_path: Path):
    """Prediction error and best-candidate agreement of a checkpoint on a dataset."""
    metanet_service = MetaNetService()
    samples = DatasetRepository().load(data_path)
    params = metanet_service.load_checkpoint(params_path)
    report = metanet_service.evaluate(params, samples)
    report["selection_agreement"] = metanet_service.selection_agreement(params, samples)
    report["exact_agreement"] = metanet_service.selection_agreement(params, samples, tolerance=0.0)
    echo_json(report)
