"""
Experiment pipeline: score, attack, defend and evaluate a batch of instances
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, NamedTuple

import numpy as np

from invrisk import __version__
from invrisk.engine.attack import expected_mse, matching_attack, tier_weights
from invrisk.engine.defense import defend
from invrisk.engine.metrics import linear_probe_accuracy, mse, pearson, quality
from invrisk.engine.risk import ICAssessment, calibrate_alpha, feasibility_weights, ic_bound_sequence, invre, \
    score_sequence, spectral_profile
from invrisk.engine.shared_map import class_center_jacobian, forward, jacobian, train_steps
from invrisk.errors import ConfigError, NumericError
from invrisk.generator.synthetic import generate_synthetic
from invrisk.harness.config import INVRISK_THREADS
from invrisk.harness.tensor_io import read_tensor
from invrisk.model.attack_model import AttackConfig
from invrisk.model.defense_model import DefenseKind, DefenseSpec
from invrisk.model.experiment_model import DataKind, ExperimentConfig, Instance, InstanceRecord, RunRecord, SweepRow
from invrisk.model.map_model import Jacobian, Loss, MapMode, SharedMapSpec
from invrisk.model.metrics_model import CorrelationResult, QualityScore
from invrisk.model.risk_model import BoundKind, Calibration, SpectralProfile

log = logging.getLogger("invrisk")

MIN_CORRELATION_INSTANCES = 10
PROBE_UTILITY = "linear_probe_accuracy"
DISTORTION_UTILITY = "relative_distortion"


class CleanState(NamedTuple):
    """
    An instance with its labelled map, Jacobian and spectral profile
    """
    instance: Instance
    spec: SharedMapSpec
    norm: float
    jac: Jacobian
    prof: SpectralProfile


class DefendedOutcome(NamedTuple):
    invre: float
    weighted_bound: float
    noise_energy: float
    distortion: float | None
    defended_x: np.ndarray | None
    quality: QualityScore | None
    ic: ICAssessment | None


def correlate(invres: list[float],
              expected_mses: list[float],
              ssims: list[float | None] | None = None) -> dict[str, CorrelationResult]:
    """
    Pearson correlation of risk scores with attack errors (and with ssim, for images)

    :raises ConfigError: fewer than MIN_CORRELATION_INSTANCES pairs
    """
    if len(invres) < MIN_CORRELATION_INSTANCES:
        raise ConfigError(f"correlation needs at least {MIN_CORRELATION_INSTANCES} instances, got {len(invres)}")
    out = {'invre_vs_expected_mse': pearson(invres, expected_mses)}
    if ssims is not None and all(s is not None for s in ssims):
        try:
            out['invre_vs_ssim'] = pearson(invres, ssims)
        except NumericError as e:
            log.warning("invre / ssim correlation skipped: %s", e)
    return out


def correlate_report(document: dict) -> dict[str, CorrelationResult]:
    """
    Correlations from a JSON report written by an attack run
    """
    rows = [inst for inst in document.get('instances', [])
            if inst.get('invre') is not None and inst.get('expected_mse') is not None]
    ssims = [inst.get('quality', {}).get('ssim') for inst in rows]
    return correlate([inst['invre'] for inst in rows],
                     [inst['expected_mse'] for inst in rows],
                     ssims if rows else None)


class ExperimentRunner(object):
    """
    Runs the score / attack / defense pipeline of an experiment configuration
    """

    def __init__(self,
                 config: ExperimentConfig,
                 threads: int = INVRISK_THREADS,
                 logger=logging.getLogger("invrisk")):
        """

        :param config: the experiment
        :param threads: instance fan-out cap, 0 for the cpu count
        """
        self.config = config
        self.threads = threads if threads > 0 else (os.cpu_count() or 1)
        self.logger = logger
        self._instances: list[Instance] | None = None
        self._spec: SharedMapSpec | None = None
        self._clean: list[CleanState] | None = None
        self.logger.info("invrisk runner (%s) initialized: %s map, %d instances, %d threads",
                         hex(id(self)), config.map_spec.mode.value, config.n_instances, self.threads)

    def _fan_out(self, fn: Callable, items: list) -> list:
        if self.threads == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=min(self.threads, len(items))) as pool:
            return list(pool.map(fn, items))

    def instances(self) -> list[Instance]:
        if self._instances is not None:
            return self._instances
        dataset = self.config.dataset
        n = self.config.n_instances
        match dataset.kind:
            case DataKind.TENSOR_FILE:
                rows = read_tensor(dataset.path).rows()
                if len(rows) < n:
                    raise ConfigError(f"{dataset.path} holds {len(rows)} instances, {n} requested")
                labels = [0] * n
                if dataset.labels:
                    values = read_tensor(dataset.labels).data
                    if values.size < n:
                        raise ConfigError(f"{dataset.labels} holds {values.size} labels, {n} requested")
                    labels = [int(v) for v in values[:n]]
                instances = [Instance(i, rows[i], labels[i], self.config.instance_seed(i)) for i in range(n)]
            case _:
                instances = generate_synthetic(dataset.kind, n, dataset.m, self.config.seed, dataset.texture)
        width = self.config.map_spec.input_width
        if any(inst.x.size != width for inst in instances):
            raise ConfigError(f"instances do not match the network input width {width}")
        self._instances = instances
        return instances

    def spec(self) -> SharedMapSpec:
        """
        The configured map, after the optional warm-up steps
        """
        if self._spec is not None:
            return self._spec
        spec = self.config.map_spec
        if self.config.warmup_steps > 0:
            trainer = spec
            if spec.mode != MapMode.HFL_GRADIENT:
                trainer = SharedMapSpec(MapMode.HFL_GRADIENT, spec.network, Loss.CROSS_ENTROPY, 0)
            instances = self.instances()
            network = train_steps(trainer, [inst.x for inst in instances], [inst.label for inst in instances],
                                  self.config.warmup_steps, self.config.warmup_lr)
            spec = spec.with_network(network)
            self.logger.info("network warmed up for %d steps", self.config.warmup_steps)
        self._spec = spec
        return spec

    def _clean_state(self, inst: Instance) -> CleanState:
        spec = self.spec().with_label(inst.label)
        norm = float(np.linalg.norm(inst.x))
        if norm == 0.0:
            raise NumericError(f"instance {inst.index} is all zeros")
        j = jacobian(spec, inst.x)
        self.logger.debug("instance %d: jacobian %dx%d", inst.index, j.p, j.m)
        return CleanState(inst, spec, norm, j, spectral_profile(j, inst.x / norm))

    def clean(self) -> list[CleanState]:
        if self._clean is None:
            self.spec()
            self._clean = self._fan_out(self._clean_state, self.instances())
        return self._clean

    def calibration(self) -> Calibration:
        """
        The loaded calibration, or one fitted on the clean batch
        """
        if self.config.calibration:
            return Calibration.load(self.config.calibration)
        return calibrate_alpha([state.prof for state in self.clean()], self.config.beta)

    def new_record(self) -> RunRecord:
        record = RunRecord(self.config, __version__)
        record.instances = [InstanceRecord(inst.index, inst.seed, inst.label) for inst in self.instances()]
        return record

    def run_score(self, record: RunRecord | None = None) -> RunRecord:
        """
        InvRE of every instance
        """
        record = record or self.new_record()
        cal = self.calibration()
        record.calibration = cal.to_dict()
        for rec, state in zip(record.instances, self.clean()):
            report = invre(state.prof, cal, mode=self.config.scoring, thresholds=self.config.thresholds)
            rec.invre = report.invre
            rec.band = report.band.value
            rec.weighted_bound = report.weighted_bound
            rec.tau_summary = {
                'd': state.prof.d,
                'rank': state.prof.rank,
                'tau_0': float(report.tau[0]),
                'tau_1': float(report.tau[1]),
                'tau_d': float(report.tau[-1]),
                'most_feasible_k': int(np.argmax(report.p_weights)) + 1
            }
        self.logger.info("scored %d instances (alpha %.6g, beta %g)", len(record.instances), cal.alpha, cal.beta)
        return record

    def _attack_config(self) -> AttackConfig:
        if self.config.attack is None:
            raise ConfigError("this run needs an attack configuration")
        return self.config.attack

    @staticmethod
    def _tiers(cfg: AttackConfig) -> list[int]:
        return [t for t in cfg.tiers if t <= cfg.iters] or [cfg.iters]

    def _attack_instance(self, state: CleanState) -> tuple[list[dict], float, QualityScore]:
        cfg = self._attack_config()
        tiers = self._tiers(cfg)
        x = state.instance.x
        result = matching_attack(state.spec, forward(state.spec, x), cfg.with_seed(state.instance.seed))
        objectives = dict(result.trajectory)
        per_tier = [{'iters': t, 'mse': mse(x, result.snapshots[t]), 'objective': objectives[t]} for t in tiers]
        self.logger.debug("instance %d attacked, final objective %.6g", state.instance.index, result.final_objective)
        return per_tier, expected_mse([t['mse'] for t in per_tier], tiers), quality(x, result.x_hat)

    def run_attack_eval(self, record: RunRecord | None = None) -> RunRecord:
        """
        Matching attack on every instance; mse per attacker tier, expected mse
        and reconstruction quality
        """
        cfg = self._attack_config()
        record = record or self.new_record()
        record.tier_weights = tier_weights(self._tiers(cfg)).tolist()
        outcomes = self._fan_out(self._attack_instance, self.clean())
        for rec, (per_tier, exp_mse, score) in zip(record.instances, outcomes):
            rec.tiers = per_tier
            rec.expected_mse = exp_mse
            rec.quality = score
        self.logger.info("attacked %d instances over tiers %s", len(outcomes), self._tiers(cfg))
        return record

    def _center_jacobian(self) -> Jacobian:
        """
        Mean Jacobian at the class centers of the batch
        """
        by_label: dict[int, list[np.ndarray]] = {}
        for inst in self.instances():
            by_label.setdefault(inst.label, []).append(inst.x)
        labels = sorted(by_label)
        centers = [np.mean(by_label[label], axis=0) for label in labels]
        return class_center_jacobian(self.spec(), centers, labels)

    def _defended(self,
                  state: CleanState,
                  defense: DefenseSpec,
                  cal: Calibration,
                  center: Jacobian | None) -> DefendedOutcome:
        inst = state.instance
        x = inst.x
        spec = defense.with_strength(defense.strength, seed=defense.seed ^ inst.seed)
        shared = forward(state.spec, x)
        basis = state.jac
        if spec.kind == DefenseKind.INVL_GNP or (spec.kind == DefenseKind.INVL_DNP and spec.reuse_jacobian):
            basis = center
        out = defend(spec, x if spec.kind.data_level else shared, basis)
        defended_x = None
        if spec.kind.data_level:
            defended_x = out.defended
            target = forward(state.spec, defended_x)
        else:
            target = out.defended

        ic = None
        noise = np.zeros(0) if out.noise is None else out.noise
        if out.dropped is not None:
            tau, ic = ic_bound_sequence(state.prof, state.jac, x / state.norm, out.dropped)
            report = score_sequence(tau, state.prof.sigma, cal, self.config.scoring, self.config.thresholds)
        else:
            prof = spectral_profile(state.jac, x / state.norm, noise / state.norm)
            bound = BoundKind.DNP if spec.kind.data_level else BoundKind.GNP
            report = invre(prof, cal, bound, self.config.scoring, self.config.thresholds)
        shared_norm = float(np.linalg.norm(shared))
        distortion = float(np.linalg.norm(target - shared)) / shared_norm if shared_norm > 0 else None

        attacked = None
        if self.config.attack is not None:
            result = matching_attack(state.spec, target, self.config.attack.with_seed(inst.seed))
            attacked = quality(x, result.x_hat)
        return DefendedOutcome(report.invre, report.weighted_bound, float(noise @ noise), distortion, defended_x,
                               attacked, ic)

    def _utility(self, outcomes: list[DefendedOutcome]) -> float | None:
        instances = self.instances()
        if outcomes[0].defended_x is None:
            values = [o.distortion for o in outcomes if o.distortion is not None]
            return float(np.mean(values)) if values else None
        if len(instances) < 2:
            return None
        order = np.random.default_rng(self.config.seed).permutation(len(instances))
        train, test = order[:len(order) // 2], order[len(order) // 2:]
        return linear_probe_accuracy([outcomes[i].defended_x for i in train],
                                     [instances[i].label for i in train],
                                     [instances[i].x for i in test],
                                     [instances[i].label for i in test])

    @staticmethod
    def _mean(values: list) -> float | None:
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    def run_defense_sweep(self, record: RunRecord | None = None, grid: list[float] | None = None) -> RunRecord:
        """
        Applies the configured defense at every grid strength (delta or lambda),
        rescoring the defended sharing against the clean calibration, attacking
        it when an attack is configured, and measuring a utility proxy:
        linear probe accuracy for data-level noise, relative distortion of the
        shared vector otherwise. Prune and dropout rows also carry the mean
        information-compression lower bound and the mean effective rank left
        after the drop.

        :param record: record to complete
        :param grid: strengths, defaults to the configured sweep grid
        """
        defense = self.config.defense
        if defense is None:
            raise ConfigError("a defense sweep needs a defense configuration")
        grid = list(self.config.grid if grid is None else grid)
        if not grid:
            raise ConfigError("a defense sweep needs a non empty grid")
        record = record or self.new_record()
        cal = self.calibration()
        center = None
        if defense.kind == DefenseKind.INVL_GNP or (defense.kind == DefenseKind.INVL_DNP and defense.reuse_jacobian):
            center = self._center_jacobian()

        rows = []
        for value in grid:
            point = defense.with_strength(value)
            outcomes = self._fan_out(lambda state: self._defended(state, point, cal, center), self.clean())
            attacked = [o.quality for o in outcomes if o.quality is not None]
            row = SweepRow(defense_param=float(value),
                           mean_invre=float(np.mean([o.invre for o in outcomes])),
                           mean_mse=self._mean([q.mse for q in attacked]),
                           mean_psnr=self._mean([q.to_dict()['psnr'] for q in attacked]),
                           mean_ssim=self._mean([q.ssim for q in attacked]),
                           utility_proxy=self._utility(outcomes),
                           mean_noise_energy=float(np.mean([o.noise_energy for o in outcomes])),
                           mean_bound=float(np.mean([o.weighted_bound for o in outcomes])),
                           mean_ic_lower_bound=self._mean([o.ic.lower_bound if o.ic is not None else None
                                                           for o in outcomes]),
                           mean_reduced_rank=self._mean([o.ic.reduced_rank if o.ic is not None else None
                                                           for o in outcomes]))
            rows.append(row)
            self.logger.info("%s at %g: mean invre %.6g", defense.kind.value, value, row.mean_invre)
        record.sweep = rows
        record.sweep_kind = defense.kind.value
        record.utility_kind = PROBE_UTILITY if defense.kind.data_level else DISTORTION_UTILITY
        return record

    def correlate(self, record: RunRecord) -> RunRecord:
        """
        Correlation of InvRE with the attack errors of a scored and attacked record
        """
        rows = [rec for rec in record.instances if rec.invre is not None and rec.expected_mse is not None]
        ssims = [rec.quality.ssim for rec in rows] if rows else None
        record.correlations = correlate([rec.invre for rec in rows], [rec.expected_mse for rec in rows], ssims)
        for name, res in record.correlations.items():
            self.logger.info("%s: r = %.4f, p = %.4g (n = %d)", name, res.r, res.p_value, res.n)
        return record

    def spectrum(self) -> list[dict]:
        """
        Singular values, cumulative singular value mass and feasibility weights per instance
        """
        out = []
        for state in self.clean():
            sigma = state.prof.sigma
            out.append({
                'index': state.instance.index,
                'seed': state.instance.seed,
                'rank': state.prof.rank,
                'sigma': sigma.tolist(),
                'cumulative_mass': (np.cumsum(sigma) / sigma.sum()).tolist(),
                'p_weights': feasibility_weights(sigma).tolist()
            })
        return out
