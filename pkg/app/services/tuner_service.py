"""
Tuner service.
Exhaustive grid search, Gaussian-process Bayesian optimization and meta-network candidate ranking.
"""

import asyncio
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence

import numpy as np
import structlog
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import norm

from app.models.metanet import FeatureVector, MetaNetParams
from app.models.scheduling import RuntimeMetrics, SchedulerConfig
from app.models.tuning import Evaluation, MetaSelection, SearchSpace, TunerReport
from app.models.workload import BandwidthTrace, ClusterSpec, ModelProfile
from app.services.metanet_service import MetaNetService
from app.services.simulation_service import SimulationService
from app.utils.errors import ConfigurationError, EvaluatorError
from config.settings import settings

logger = structlog.get_logger(__name__)

Evaluator = Callable[[SchedulerConfig], float]

LENGTH_SCALES = (0.1, 0.2, 0.3, 0.5, 0.8)
JITTER = 1e-8


class SimulationEvaluator:
    """Measures a configuration by simulating a few iterations at a fixed point of the trace."""

    def __init__(self, profile: ModelProfile, cluster: ClusterSpec, trace: BandwidthTrace,
                 start_iter: int = 0, eval_iters: Optional[int] = None, overhead_s: Optional[float] = None):
        self.simulator = SimulationService(profile, cluster, overhead_s=overhead_s)
        self.trace = trace
        self.start_iter = start_iter
        self.cost_iterations = eval_iters or settings.EVAL_ITERS

    def __call__(self, config: SchedulerConfig) -> float:
        result = self.simulator.simulate(config, self.trace, self.cost_iterations, start_iter=self.start_iter)
        return result.mean_speed


def _cost_of(evaluator: Evaluator, cost_per_eval: Optional[int]) -> int:
    if cost_per_eval is not None:
        return cost_per_eval
    return int(getattr(evaluator, "cost_iterations", 1))


def _evaluate(tuner: str, evaluator: Evaluator, config: SchedulerConfig, cost: int,
              evaluations: List[Evaluation], started: float) -> float:
    try:
        speed = float(evaluator(config))
    except Exception as e:
        logger.error("evaluator_failed", tuner=tuner, config=config.label(), exc_info=True)
        partial = TunerReport.from_evaluations(tuner, evaluations, time.perf_counter() - started)
        raise EvaluatorError(f"{tuner}: evaluator failed on {config.label()}: {e}", partial_report=partial)
    evaluations.append(Evaluation(config=config, speed=speed, cost_iterations=cost))
    return speed


def _grid_coordinates(space: SearchSpace, configs: Sequence[SchedulerConfig]) -> np.ndarray:
    """(log2 S_p, S_c) scaled to [0, 1] over the grid bounds."""
    log_sp = np.log2(np.array([c.partition_bytes for c in configs], dtype=np.float64))
    sc = np.array([c.credit_multiplier for c in configs], dtype=np.float64)
    lo_sp, hi_sp = np.log2(space.partition_grid[0]), np.log2(space.partition_grid[-1])
    lo_sc, hi_sc = space.credit_grid[0], space.credit_grid[-1]
    x1 = (log_sp - lo_sp) / (hi_sp - lo_sp) if hi_sp > lo_sp else np.zeros_like(log_sp)
    x2 = (sc - lo_sc) / (hi_sc - lo_sc) if hi_sc > lo_sc else np.zeros_like(sc)
    return np.stack([x1, x2], axis=1)


def _se_kernel(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.exp(-0.5 * np.maximum(sq, 0.0) / (length_scale * length_scale))


def _gp_posterior(x_obs: np.ndarray, y_obs: np.ndarray, x_query: np.ndarray, noise: float):
    """Posterior mean/std of a unit-variance SE GP, length scale picked by marginal likelihood."""
    best = None
    for length_scale in LENGTH_SCALES:
        k = _se_kernel(x_obs, x_obs, length_scale) + (noise + JITTER) * np.eye(len(x_obs))
        factor = cho_factor(k, lower=True)
        alpha = cho_solve(factor, y_obs)
        log_likelihood = -0.5 * float(y_obs @ alpha) - float(np.sum(np.log(np.diag(factor[0]))))
        if best is None or log_likelihood > best[0]:
            best = (log_likelihood, length_scale, factor, alpha)
    _, length_scale, factor, alpha = best
    k_star = _se_kernel(x_query, x_obs, length_scale)
    mean = k_star @ alpha
    v = cho_solve(factor, k_star.T)
    variance = np.maximum(1.0 - np.sum(k_star * v.T, axis=1), 0.0)
    return mean, np.sqrt(variance)


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    improvement = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, improvement / std, 0.0)
    ei = improvement * norm.cdf(z) + std * norm.pdf(z)
    return np.where(std > 0, np.maximum(ei, 0.0), 0.0)


class TunerService:
    def __init__(self):
        self.metanet_service = MetaNetService()

    def grid_search(self, space: SearchSpace, evaluator: Evaluator,
                    cost_per_eval: Optional[int] = None) -> TunerReport:
        """Evaluate every grid point; best = argmax speed, ties to the smaller (S_p, S_c)."""
        started = time.perf_counter()
        cost = _cost_of(evaluator, cost_per_eval)
        evaluations: List[Evaluation] = []
        for config in space.configs():
            _evaluate("grid", evaluator, config, cost, evaluations, started)
        report = TunerReport.from_evaluations("grid", evaluations, time.perf_counter() - started)
        logger.info("grid_search_done", points=len(evaluations), best=report.best_config.label(),
                    speed=round(report.best_speed, 3))
        return report

    async def grid_search_parallel(self, space: SearchSpace, evaluator: Evaluator,
                                   pool_workers: Optional[int] = None,
                                   cost_per_eval: Optional[int] = None) -> TunerReport:
        """Grid search with evaluations spread over a process pool; results keep grid order."""
        workers = settings.POOL_WORKERS if pool_workers is None else pool_workers
        if workers <= 0:
            return self.grid_search(space, evaluator, cost_per_eval)
        started = time.perf_counter()
        cost = _cost_of(evaluator, cost_per_eval)
        configs = list(space.configs())
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [loop.run_in_executor(pool, evaluator, config) for config in configs]
            outcomes = await asyncio.gather(*futures, return_exceptions=True)
        evaluations: List[Evaluation] = []
        for config, outcome in zip(configs, outcomes):
            if isinstance(outcome, BaseException):
                partial = TunerReport.from_evaluations("grid", evaluations, time.perf_counter() - started)
                raise EvaluatorError(f"grid: evaluator failed on {config.label()}: {outcome}",
                                     partial_report=partial)
            evaluations.append(Evaluation(config=config, speed=float(outcome), cost_iterations=cost))
        return TunerReport.from_evaluations("grid", evaluations, time.perf_counter() - started)

    def bayes_opt(self, space: SearchSpace, evaluator: Evaluator, budget: Optional[int] = None, seed: int = 0,
                  init_points: Optional[int] = None, cost_per_eval: Optional[int] = None) -> TunerReport:
        """
        GP/EI search over the grid: random initial points, then the unevaluated grid point with the
        highest expected improvement. Never exceeds the budget.
        """
        budget = settings.BO_BUDGET if budget is None else budget
        init_points = settings.BO_INIT_POINTS if init_points is None else init_points
        if budget < 3:
            raise ConfigurationError(f"BO budget must be >= 3, got {budget}")
        started = time.perf_counter()
        cost = _cost_of(evaluator, cost_per_eval)
        configs = list(space.configs())
        coords = _grid_coordinates(space, configs)
        budget = min(budget, len(configs))
        rng = np.random.default_rng(seed)

        first = rng.choice(len(configs), size=min(init_points, budget), replace=False)
        evaluated: List[int] = [int(i) for i in first]
        evaluations: List[Evaluation] = []
        speeds: List[float] = []
        for index in evaluated:
            speeds.append(_evaluate("bo", evaluator, configs[index], cost, evaluations, started))

        while len(evaluated) < budget:
            seen = set(evaluated)
            remaining = np.array([i for i in range(len(configs)) if i not in seen])
            y = np.asarray(speeds)
            spread = float(y.max() - y.min())
            choice = None
            if spread > 0:
                y_std = (y - y.mean()) / y.std()
                noise = (0.01 * spread / y.std()) ** 2
                try:
                    mean, std = _gp_posterior(coords[evaluated], y_std, coords[remaining], noise)
                    ei = expected_improvement(mean, std, float(y_std.max()))
                    if np.any(ei > 0):
                        choice = int(remaining[int(np.argmax(ei))])
                except (LinAlgError, ValueError):
                    logger.warning("bo_kernel_degenerate", evaluated=len(evaluated))
            if choice is None:
                choice = int(rng.choice(remaining))
            evaluated.append(choice)
            speeds.append(_evaluate("bo", evaluator, configs[choice], cost, evaluations, started))

        report = TunerReport.from_evaluations("bo", evaluations, time.perf_counter() - started)
        logger.info("bayes_opt_done", evaluations=len(evaluations), best=report.best_config.label(),
                    speed=round(report.best_speed, 3))
        return report

    def meta_select(self, params: MetaNetParams, metrics: RuntimeMetrics, space: SearchSpace,
                    current: Optional[SchedulerConfig] = None) -> MetaSelection:
        """
        Score every candidate by the mean predicted per-worker speed in one batched inference.
        The current configuration is scored in the same pass. No evaluator is involved.
        """
        current = current or metrics.config
        base = FeatureVector.from_metrics(metrics)
        candidates = list(space.configs())
        features = [base.with_candidate(config) for config in candidates] + [base.with_candidate(current)]
        predictions = self.metanet_service.predict_many(params, features)
        scores = [(config, float(np.mean(prediction))) for config, prediction in zip(candidates, predictions)]

        best_config, best_speed = scores[0]
        for config, speed in scores[1:]:
            if speed > best_speed:
                best_config, best_speed = config, speed
        return MetaSelection(best_config=best_config, best_speed=best_speed,
                             current_speed=float(np.mean(predictions[-1])), scores=scores)

    def meta_report(self, selection: MetaSelection) -> TunerReport:
        """Search report of a meta selection: predicted scores only, zero simulated iterations."""
        evaluations = [Evaluation(config=config, speed=speed, cost_iterations=0, predicted=True)
                       for config, speed in selection.scores]
        return TunerReport.from_evaluations("meta", evaluations)
