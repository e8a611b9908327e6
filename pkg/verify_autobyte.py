import asyncio
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import structlog

from app.models.control import ControllerState
from app.models.harness import config_from_text
from app.models.metanet import FeatureScaler, MetaNetDims, MetaNetParams
from app.models.tuning import SearchSpace
from app.services import network
from app.services.controller_service import ControllerService
from app.services.harness_service import HarnessService
from app.services.metanet_service import MetaNetService
from app.services.simulation_service import SimulationService
from app.services.tuner_service import SimulationEvaluator, TunerService
from app.services.workload_service import WorkloadService
from app.storage.repositories.scenario_repo import ScenarioRepository
from app.utils.helpers import ActionKindEnum, TunerEnum
from app.utils.log import configure_logging
from config.settings import settings

configure_logging()
logger = structlog.get_logger("verify_autobyte")

CHECKPOINT = settings.DATA_PATH / "checkpoints" / "metanet.ckpt"
BAD_STARTS = ("4KB,1", "1GB,1", "1GB,16", "4KB,16", "64MB,1")
MIN_MARGIN = 0.05
MAX_COST_SHARE = 0.72
MAX_REACTION_GROUPS = 2

controller_service = ControllerService()
harness_service = HarnessService()
metanet_service = MetaNetService()
tuner_service = TunerService()
workload_service = WorkloadService()


async def trained_params():
    """Checkpoint the scenarios point at; collected and trained when absent."""
    if CHECKPOINT.is_file():
        logger.info("checkpoint_reused", path=str(CHECKPOINT))
        return metanet_service.load_checkpoint(CHECKPOINT), True
    spec = ScenarioRepository().load_collect_spec(settings.DATA_PATH / "collect" / "default.json")
    samples = await harness_service.collect_dataset(spec)
    train, held = metanet_service.split_by_environment(samples, holdout=0.1)
    params = metanet_service.train_offline(train)
    scores = metanet_service.evaluate(params, held)
    agreement = metanet_service.selection_agreement(params, held)
    exact = metanet_service.selection_agreement(params, held, tolerance=0.0)
    logger.info("offline_quality", samples=len(samples), held_out=len(held), agreement=round(agreement, 4),
                exact_agreement=round(exact, 4), median_relative_error=round(scores["median_relative_error"], 4))
    metanet_service.save_checkpoint(CHECKPOINT, params)
    ok = len(samples) >= 10_000 and agreement >= 0.8 and scores["median_relative_error"] < 0.1
    if not ok:
        logger.error("offline_quality_low")
    return params, ok


def check_convergence(params) -> bool:
    profile = workload_service.load_profile(settings.DATA_PATH / "profiles" / "resnet50.json")
    cluster = workload_service.load_cluster(settings.DATA_PATH / "clusters" / "ps8.json")
    trace = workload_service.load_trace(settings.DATA_PATH / "traces" / "static_10g.json")
    space = SearchSpace()
    optimum = tuner_service.grid_search(space, SimulationEvaluator(profile, cluster, trace)).best_config
    ok = True
    for text in BAD_STARTS:
        start = config_from_text(text)
        record = controller_service.run_autobyte(profile, cluster, trace, start, params, 60, space=space)
        held = [(g.partition_bytes, g.credit_multiplier) for g in record.groups[3:]]
        converged = all(pair == (optimum.partition_bytes, optimum.credit_multiplier) for pair in held)
        logger.info("convergence", start=start.label(), optimum=optimum.label(), final=record.final_config.label(),
                    reconfigurations=len(record.reconfig_log), converged=converged)
        ok = ok and converged
    return ok


def check_hysteresis(streams: int = 1000) -> bool:
    """Random predictors on random metric streams; a reconfiguration must always clear the gain threshold."""
    profile = workload_service.load_profile(settings.DATA_PATH / "profiles" / "tiny.json")
    cluster = workload_service.load_cluster(settings.DATA_PATH / "clusters" / "ps1.json")
    space = SearchSpace(partition_grid=(4096, 65536, 1024 * 1024), credit_grid=(1, 2, 4, 8, 16))
    configs = list(space.configs())
    dims = MetaNetDims(embed_dim=4, hidden_dim=4, dense_dim=8, type_embed_dim=2)
    rng = np.random.default_rng(0)
    reconfigurations, violations = 0, 0
    for stream in range(streams):
        config = configs[rng.integers(len(configs))]
        trace = workload_service.static_trace(float(rng.uniform(0.5, 25.0)))
        simulator = SimulationService(profile, cluster)
        metrics = simulator.collect_metrics(simulator.simulate(config, trace, 10), 0, 10)
        scaler = FeatureScaler(log_speed_mean=math.log(metrics.mean_speed),
                               log_speed_std=float(rng.uniform(0.05, 1.0)))
        params = MetaNetParams(dims=dims, scaler=scaler, weights=network.init_weights(dims, stream))
        state = ControllerState(current_config=config, params=params)
        action = controller_service.trigger_decide(state, metrics, space, drift_threshold=float("inf"))
        if action.kind == ActionKindEnum.RECONFIGURE:
            reconfigurations += 1
            violations += int(action.predicted_gain <= settings.GAIN_THRESHOLD)
    logger.info("hysteresis", streams=streams, reconfigurations=reconfigurations, violations=violations)
    return violations == 0


async def check_scenarios() -> bool:
    repo = ScenarioRepository()
    ok = True
    for name in ("resnet50_ps_dynamic", "resnet50_ps_jobs"):
        scenario = repo.load_scenario(settings.DATA_PATH / "scenarios" / f"{name}.json")
        rows = {row.tuner: row for row in await harness_service.compare_tuners(
            scenario, [TunerEnum.GRID, TunerEnum.BO, TunerEnum.META])}
        margin = rows[TunerEnum.META].mean_speed / rows[TunerEnum.BO].mean_speed - 1.0
        cost_share = rows[TunerEnum.META].search_cost_iterations / rows[TunerEnum.GRID].search_cost_iterations
        logger.info("scenario_compared", scenario=name, margin_over_bo=round(margin, 4), cost_share=cost_share,
                    meta_speedup=round(rows[TunerEnum.META].speedup, 4))
        if margin < MIN_MARGIN:
            logger.error("adaptation_margin_low", scenario=name, margin=round(margin, 4))
            ok = False
        if cost_share >= MAX_COST_SHARE:
            logger.error("search_cost_high", scenario=name, cost_share=cost_share)
            ok = False
    return ok


async def check_reaction() -> bool:
    """Every competing-job change in the jobs scenario is answered within a couple of groups."""
    scenario = ScenarioRepository().load_scenario(settings.DATA_PATH / "scenarios" / "resnet50_ps_jobs.json")
    with tempfile.TemporaryDirectory() as tmp:
        outcome = await harness_service.run_scenario(scenario, tmp)
    late = [groups for groups in outcome.reaction_groups if groups is None or groups > MAX_REACTION_GROUPS]
    logger.info("reaction", scenario=scenario.name, reaction_groups=outcome.reaction_groups)
    if late:
        logger.error("reaction_slow", scenario=scenario.name, reaction_groups=outcome.reaction_groups)
    return not late


async def check_determinism() -> bool:
    scenario = ScenarioRepository().load_scenario(settings.DATA_PATH / "scenarios" / "vgg16_ps_dynamic.json")
    with tempfile.TemporaryDirectory() as tmp:
        first = await harness_service.run_scenario(scenario, Path(tmp) / "a")
        await harness_service.run_scenario(scenario, Path(tmp) / "b")
        same = all((Path(tmp) / "a" / name).read_bytes() == (Path(tmp) / "b" / name).read_bytes()
                   for name in first.files)
    if not same:
        logger.error("outputs_differ", scenario=scenario.name)
    return same


async def main():
    script_failed = False
    try:
        params, trained_ok = await trained_params()
        results = [trained_ok, check_convergence(params), check_hysteresis(), await check_scenarios(),
                   await check_reaction(), await check_determinism()]
        script_failed = not all(results)
        logger.info("checks", passed=int(np.sum(results)), total=len(results))
    except Exception as e:
        logger.error("verification_crashed", error=str(e), exc_info=True)
        script_failed = True

    if script_failed:
        logger.error("autobyte verification FAILED")
        sys.exit(1)
    logger.info("autobyte verification passed")


if __name__ == "__main__":
    asyncio.run(main())
