"""Seeded ensembles and statistical comparisons of simulated waves against theory.

An ensemble is a list of replicates of one ExperimentConfig, run with
independent Philox streams and folded in replicate order. The compare_*
functions reduce an ensemble to a statistic dictionary that always carries its
sample size; `verify` runs the comparisons named in the config and records
whether each passed.
"""

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union
import datetime
import logging
import math
import platform
import tomllib

import numpy as np
from scipy import stats

from .engine import (
    DENSE_LOG_MAX_N,
    ENGINES,
    RunSchedule,
    Snapshot,
    Trajectory,
    count_tau_inversions,
    find_snapshot,
    run,
    seed_for_replicate,
)
from .errors import (
    ConfigError,
    InsufficientResolution,
    InvalidParams,
    QueryOutOfRange,
    TooFewTypes,
)
from .model import ModelParams
from .observables import modal_type_and_offset, martingale_Z_path, renewal_count, supermartingale_Y_path
from .renewal import DEFAULT_H, DEFAULT_T_MAX, TheoryCurves, cached_curves
from .theory import Scales, early_curve, predicted_curvature, predictions, scales
from . import utils

_logger = logging.getLogger("adaptwave")

SCHEMA_VERSION = 1

TARGETS = (
    "theorem1",
    "theorem2",
    "theorem3",
    "spacings",
    "martingale",
    "engines",
    "early",
    "speed",
    "mean",
    "growth",
)

DEFAULT_PROBES = (0.5, 1.2, 1.6, 2.0, 2.5, 3.0)

# chi-square homogeneity of the two engines is rejected below this p-value
ENGINE_ALPHA = 1e-3


@dataclass(frozen=True)
class VerifySettings:
    targets: Tuple[str, ...] = ("theorem1", "theorem2", "spacings")
    probes: Tuple[float, ...] = DEFAULT_PROBES
    theorem3_t: float = 2.5
    ell_max: Optional[int] = None
    min_count: int = 10
    n_values: Tuple[int, ...] = ()
    martingale_types: Tuple[int, ...] = (0, 1, 2)
    martingale_times: Tuple[float, ...] = (1.0, 5.0, 10.0)
    se_band: float = 3.0
    spacing_threshold: float = 0.7
    curvature_fraction: float = 0.95
    curvature_factor: float = 3.0
    early_factor: float = 2.0
    engine_replicates: int = 10_000
    engine_time: float = 5.0
    proposition_fraction: float = 0.9
    growth_delta: float = 0.25

    def __post_init__(self):
        unknown = [t for t in self.targets if t not in TARGETS]
        if unknown:
            raise ConfigError(f"verify.targets: unknown {unknown}, expected some of {TARGETS}")
        if any(t <= 0.0 for t in self.probes):
            raise ConfigError(f"verify.probes must be positive, got {self.probes}")
        if self.min_count < 1:
            raise ConfigError(f"verify.min_count must be >= 1, got {self.min_count}")
        if self.ell_max is not None and self.ell_max < 1:
            raise ConfigError(f"verify.ell_max must be >= 1, got {self.ell_max}")
        if self.engine_replicates < 1 or self.engine_time <= 0.0:
            raise ConfigError("verify.engine_replicates and verify.engine_time must be positive")
        if self.se_band <= 0.0:
            raise ConfigError(f"verify.se_band must be positive, got {self.se_band}")
        if not 0.0 < self.proposition_fraction <= 1.0:
            raise ConfigError(
                f"verify.proposition_fraction must lie in (0, 1], got {self.proposition_fraction}"
            )
        if self.growth_delta <= 0.0:
            raise ConfigError(f"verify.growth_delta must be positive, got {self.growth_delta}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an ensemble; reports are a pure function of it."""

    params: ModelParams
    replicates: int = 20
    master_seed: int = 0
    t_mult: float = 3.0
    t_end: Optional[float] = None
    resolution: int = 61
    engine: str = "effective"
    workers: Optional[int] = None
    dense_log: Optional[bool] = None
    verify: VerifySettings = field(default_factory=VerifySettings)

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"run.replicates must be >= 1, got {self.replicates}")
        if not self.t_mult > 0.0:
            raise ConfigError(f"run.t_mult must be positive, got {self.t_mult}")
        if self.t_end is not None and not self.t_end > 0.0:
            raise ConfigError(f"run.t_end must be positive, got {self.t_end}")
        if self.resolution < 2:
            raise ConfigError(f"run.resolution must be >= 2, got {self.resolution}")
        if self.engine not in ENGINES:
            raise ConfigError(f"run.engine must be one of {ENGINES}, got {self.engine!r}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"run.workers must be >= 1, got {self.workers}")
        if self.params.mu == 0.0 and self.t_end is None:
            raise ConfigError("run.t_end is required when model.mu = 0 (a_N is infinite)")

    def scales(self) -> Optional[Scales]:
        if self.params.mu == 0.0:
            return None
        return scales(self.params)

    def horizon(self) -> float:
        if self.t_end is not None:
            return float(self.t_end)
        return self.t_mult * self.scales().a_N

    def schedule(self) -> RunSchedule:
        """Evenly spaced snapshots plus the probe times every comparison needs."""
        t_end = self.horizon()
        sc = self.scales()
        extra: List[float] = []
        if sc is not None:
            v = self.verify
            extra += [sc.a_N * t for t in (*v.probes, v.theorem3_t)]
            extra += [sc.t_star * i / 8 for i in range(1, 9)]
        return RunSchedule.on_grid(t_end, self.resolution, extra)

    def use_dense_log(self) -> bool:
        if self.dense_log is not None:
            return self.dense_log
        if self.params.N > DENSE_LOG_MAX_N:
            if "martingale" in self.verify.targets:
                _logger.warning(
                    f"dense event log is off for N={self.params.N} > {DENSE_LOG_MAX_N}; "
                    "set run.dense_log = true for martingale diagnostics"
                )
            return False
        expected_events = self.params.N * self.horizon() * (1.0 + self.params.mu)
        return utils.dense_log_affordable(expected_events, self.workers or 1)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "model": self.params.as_dict(),
            "run": {
                "replicates": self.replicates,
                "seed": self.master_seed,
                "t_mult": self.t_mult,
                "t_end": self.t_end,
                "resolution": self.resolution,
                "engine": self.engine,
                "dense_log": self.dense_log,
            },
            "verify": asdict(self.verify),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Builds a config from the nested [model]/[run]/[verify] mapping of a TOML file."""
        unknown = set(data) - {"model", "run", "verify"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        model = dict(data.get("model", {}))
        for key in ("N", "mu", "s"):
            if key not in model:
                raise ConfigError(f"missing key model.{key}")
        _reject_unknown("model", model, ("N", "mu", "s"))
        try:
            params = ModelParams(
                N=_convert("model.N", model["N"], _integer),
                mu=_convert("model.mu", model["mu"], float),
                s=_convert("model.s", model["s"], float),
            )
        except InvalidParams as err:
            raise ConfigError(str(err)) from err

        run_section = dict(data.get("run", {}))
        _reject_unknown("run", run_section, _RUN_KEYS)
        kwargs: Dict[str, Any] = {"params": params}
        for key, (name, parse) in _RUN_KEYS.items():
            if key in run_section and run_section[key] is not None:
                kwargs[name] = _convert(f"run.{key}", run_section[key], parse)

        verify_section = dict(data.get("verify", {}))
        _reject_unknown("verify", verify_section, _VERIFY_KEYS)
        verify_kwargs = {
            key: _convert(f"verify.{key}", value, _VERIFY_KEYS[key])
            for key, value in verify_section.items()
        }
        kwargs["verify"] = VerifySettings(**verify_kwargs)
        return cls(**kwargs)

    @classmethod
    def from_toml(
        cls, path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None
    ) -> "ExperimentConfig":
        """Reads a TOML config; `overrides` maps dotted keys like "run.seed" to values."""
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err
        _logger.info(f"loaded config {path}")
        return cls.from_dict(apply_overrides(data, overrides or {}))


def _integer(value: Any) -> int:
    # accepts 1e6 written as a float
    x = float(value)
    if x != int(x):
        raise ValueError(f"{value!r} is not an integer")
    return int(x)


def _boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    raise ValueError(f"{value!r} is not a boolean")


def _int_tuple(value: Any) -> Tuple[int, ...]:
    return tuple(_integer(v) for v in value)


def _float_tuple(value: Any) -> Tuple[float, ...]:
    return tuple(float(v) for v in value)


def _str_tuple(value: Any) -> Tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    return tuple(str(v) for v in value)


def _optional_int(value: Any) -> Optional[int]:
    return None if value is None else _integer(value)


_RUN_KEYS: Dict[str, Tuple[str, Callable]] = {
    "replicates": ("replicates", _integer),
    "seed": ("master_seed", _integer),
    "t_mult": ("t_mult", float),
    "t_end": ("t_end", float),
    "resolution": ("resolution", _integer),
    "engine": ("engine", str),
    "workers": ("workers", _integer),
    "dense_log": ("dense_log", _boolean),
}

_VERIFY_KEYS: Dict[str, Callable] = {
    "targets": _str_tuple,
    "probes": _float_tuple,
    "theorem3_t": float,
    "ell_max": _optional_int,
    "min_count": _integer,
    "n_values": _int_tuple,
    "martingale_types": _int_tuple,
    "martingale_times": _float_tuple,
    "se_band": float,
    "spacing_threshold": float,
    "curvature_fraction": float,
    "curvature_factor": float,
    "early_factor": float,
    "engine_replicates": _integer,
    "engine_time": float,
    "proposition_fraction": float,
    "growth_delta": float,
}


def _reject_unknown(section: str, values: Mapping[str, Any], known) -> None:
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {unknown}")


def _convert(key: str, value: Any, parse: Callable) -> Any:
    try:
        return parse(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{key}: cannot use {value!r} ({err})") from err


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = {section: dict(values) for section, values in data.items()}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        merged.setdefault(section, {})[key] = value
    return merged


@dataclass
class ReplicateSummary:
    """What an ensemble keeps of one replicate: counters, snapshots, establishment times.

    `martingale` maps "Z" and "Y" to {type: values at (0, *martingale_times)}.
    """

    index: int
    seed: int
    events: int
    mutations: int
    replacements: int
    noops: int
    clamp_events: int
    degenerate: bool
    degenerate_reason: str
    end_time: float
    wall_time: float
    snapshots: List[Snapshot]
    taus: Dict[int, float]
    lead_at_tau: Dict[int, float]
    area_at_tau: Dict[int, float] = field(default_factory=dict)
    first_seen: Dict[int, float] = field(default_factory=dict)
    martingale: Dict[str, Dict[int, List[float]]] = field(default_factory=dict)

    @classmethod
    def from_trajectory(
        cls,
        index: int,
        traj: Trajectory,
        martingale: Optional[Dict[str, Dict[int, List[float]]]] = None,
    ) -> "ReplicateSummary":
        return cls(
            index=index,
            seed=traj.seed,
            events=traj.events,
            mutations=traj.mutations,
            replacements=traj.replacements,
            noops=traj.noops,
            clamp_events=traj.clamp_events,
            degenerate=traj.degenerate,
            degenerate_reason=traj.degenerate_reason,
            end_time=traj.end_time,
            wall_time=traj.wall_time,
            snapshots=traj.snapshots,
            taus=dict(traj.taus),
            lead_at_tau=dict(traj.lead_at_tau),
            area_at_tau=dict(traj.area_at_tau),
            first_seen=dict(traj.first_seen),
            martingale=martingale or {},
        )

    @property
    def tau_inversions(self) -> int:
        return count_tau_inversions(self.taus)

    def snapshot_at(self, t: float) -> Snapshot:
        return find_snapshot(self.snapshots, t)

    def as_dict(self) -> Dict[str, Any]:
        """Deterministic summary; wall time is kept out."""
        last = self.snapshots[-1] if self.snapshots else None
        return {
            "index": self.index,
            "seed": self.seed,
            "events": self.events,
            "mutations": self.mutations,
            "replacements": self.replacements,
            "noops": self.noops,
            "clamp_events": self.clamp_events,
            "degenerate": self.degenerate,
            "degenerate_reason": self.degenerate_reason,
            "end_time": self.end_time,
            "final_M": last.mean if last else None,
            "final_Q": last.lead if last else None,
            "max_Q": max((snap.lead for snap in self.snapshots), default=None),
            "taus": {j: self.taus[j] for j in sorted(self.taus)},
            "tau_inversions": self.tau_inversions,
            "martingale": self.martingale,
        }


def _martingale_values(traj: Trajectory, settings: VerifySettings) -> Dict[str, Dict[int, List[float]]]:
    times = [0.0] + [t for t in settings.martingale_times if t <= traj.end_time]
    out: Dict[str, Dict[int, List[float]]] = {"Z": {}, "Y": {}}
    for j in settings.martingale_types:
        out["Z"][j] = martingale_Z_path(traj, j, times)
        out["Y"][j] = supermartingale_Y_path(traj, j, times)
    return out


def _replicate_task(config: ExperimentConfig, index: int, dense_log: bool) -> ReplicateSummary:
    seed = seed_for_replicate(config.master_seed, index)
    traj = run(
        config.params, config.schedule(), seed, engine=config.engine, dense_log=dense_log
    )
    martingale = None
    if "martingale" in config.verify.targets and traj.log is not None:
        martingale = _martingale_values(traj, config.verify)
    return ReplicateSummary.from_trajectory(index, traj, martingale)


def _execute(task: Callable, args: Sequence[tuple], workers: int, label: str) -> List[Any]:
    """Runs task(*a) for every a, in worker processes when workers > 1; results in input order."""
    results: Dict[int, Any] = {}
    if workers <= 1 or len(args) <= 1:
        for k, a in enumerate(args):
            results[k] = task(*a)
            _logger.info(f"{label}: {k + 1}/{len(args)} done")
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(task, *a): k for k, a in enumerate(args)}
            for done, future in enumerate(as_completed(futures), start=1):
                results[futures[future]] = future.result()
                _logger.info(f"{label}: {done}/{len(args)} done")
    return [results[k] for k in sorted(results)]


def _summary_stats(values: Sequence[float]) -> Dict[str, Any]:
    """n, mean, standard error, median and interquartile range of `values`."""
    arr = np.asarray(values, dtype=float)
    n = int(arr.size)
    if n == 0:
        return {"n": 0, "mean": None, "se": None, "median": None, "iqr": None}
    q25, q50, q75 = np.percentile(arr, [25, 50, 75])
    se = float(arr.std(ddof=1) / math.sqrt(n)) if n > 1 else None
    return {
        "n": n,
        "mean": float(arr.mean()),
        "se": se,
        "median": float(q50),
        "iqr": [float(q25), float(q75)],
    }


def _fraction_stats(held: int, n: int) -> Dict[str, Any]:
    """Fraction held / n with its binomial standard error."""
    if n == 0:
        return {"n": 0, "held": 0, "fraction": None, "se": None}
    p = held / n
    return {"n": n, "held": held, "fraction": p, "se": math.sqrt(p * (1.0 - p) / n)}


@dataclass
class EnsembleReport:
    config: ExperimentConfig
    replicates: List[ReplicateSummary]
    statistics: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    created: str = field(
        default_factory=lambda: datetime.datetime.now(datetime.timezone.utc).isoformat()
    )
    schema_version: int = SCHEMA_VERSION

    @property
    def params(self) -> ModelParams:
        return self.config.params

    def scales(self) -> Scales:
        sc = self.config.scales()
        if sc is None:
            raise InvalidParams("theory comparisons need mu > 0")
        return sc

    @property
    def passed(self) -> bool:
        return all(stat.get("passed", True) for stat in self.statistics.values())

    def provenance(self) -> Dict[str, Any]:
        from . import __version__

        return {
            "config": self.config.as_dict(),
            "seeds": [rep.seed for rep in self.replicates],
            "code_version": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        }

    def diagnostics(self) -> Dict[str, int]:
        """Ensemble counts of the soft per-replicate checks."""
        reps = self.replicates
        return {
            "tau_inversions": sum(rep.tau_inversions for rep in reps),
            "replicates_with_inversions": sum(rep.tau_inversions > 0 for rep in reps),
            "clamped": sum(rep.clamp_events > 0 for rep in reps),
            "degenerate": sum(rep.degenerate for rep in reps),
        }

    def body(self) -> Dict[str, Any]:
        """Everything but the creation timestamp and wall times."""
        return {
            "schema_version": self.schema_version,
            "provenance": self.provenance(),
            "diagnostics": self.diagnostics(),
            "statistics": self.statistics,
            "replicates": [rep.as_dict() for rep in self.replicates],
        }

    def to_dict(self) -> Dict[str, Any]:
        out = self.body()
        out["created"] = self.created
        out["wall_times"] = [rep.wall_time for rep in self.replicates]
        return out

    def body_json(self) -> str:
        return utils.dumps(self.body())

    def to_json(self) -> str:
        return utils.dumps(self.to_dict())

    def write(self, out_dir: Union[str, Path], name: str = "report.json") -> Path:
        out_dir = Path(out_dir)
        with utils.output_lock(out_dir):
            path = utils.write_json(self.to_dict(), out_dir / name)
            utils.RunIndex(out_dir).get_and_add(name)
        return path


def run_ensemble(config: ExperimentConfig, workers: Optional[int] = None) -> EnsembleReport:
    """Runs config.replicates independent replicates and folds them in index order.

    Replicate i always uses stream seed_for_replicate(master_seed, i), so the
    result does not depend on the number of workers. Degenerate replicates are
    kept and flagged.
    """
    workers = workers or config.workers or utils.default_workers()
    workers = min(workers, config.replicates)
    dense_log = config.use_dense_log()
    _logger.info(
        f"ensemble: {config.replicates} replicates of {config.params}, "
        f"engine={config.engine} horizon={config.horizon():.6g} workers={workers}"
    )
    args = [(config, index, dense_log) for index in range(config.replicates)]
    summaries = _execute(_replicate_task, args, workers, "replicates")

    report = EnsembleReport(config=config, replicates=summaries)
    diag = report.diagnostics()
    if diag["degenerate"]:
        _logger.warning(
            f"{diag['degenerate']}/{len(summaries)} replicates stopped on a degenerate population"
        )
    if diag["tau_inversions"]:
        _logger.info(
            f"{diag['tau_inversions']} establishment-order inversions in "
            f"{diag['replicates_with_inversions']}/{len(summaries)} replicates"
        )
    return report


def sup_norm_statistic(observed: Sequence[float], predicted: Sequence[float]) -> float:
    """max_k |observed_k - predicted_k|."""
    diff = np.abs(np.asarray(observed, dtype=float) - np.asarray(predicted, dtype=float))
    return float(diff.max())


def _check_probes(probes: Sequence[float]) -> Tuple[float, ...]:
    probes = tuple(float(t) for t in probes)
    if not probes:
        raise ValueError("need at least one probe time")
    near = [t for t in probes if abs(t - 1.0) < 0.1]
    if near:
        raise ValueError(f"probe times {near} are within 0.1 of the discontinuity at 1")
    return probes


def _scaled_sup_norm(
    ensemble: EnsembleReport,
    curve: Callable,
    observable: Callable[[Snapshot], float],
    probes: Optional[Sequence[float]],
    name: str,
) -> Dict[str, Any]:
    sc = ensemble.scales()
    probes = _check_probes(probes if probes is not None else ensemble.config.verify.probes)
    predicted = curve(np.array(probes))
    values: List[float] = []
    excluded = 0
    for rep in ensemble.replicates:
        try:
            observed = [observable(rep.snapshot_at(sc.a_N * t)) / sc.k_N for t in probes]
        except QueryOutOfRange:
            excluded += 1
            continue
        values.append(sup_norm_statistic(observed, predicted))
    out = {"statistic": name, "probes": list(probes), "excluded": excluded, "values": values}
    out.update(_summary_stats(values))
    return out


def compare_theorem1(
    ensemble: EnsembleReport, curves: TheoryCurves, probes: Optional[Sequence[float]] = None
) -> Dict[str, Any]:
    """Median and IQR over replicates of sup over the probes of |Q(a_N t)/k_N - q(t)|."""
    return _scaled_sup_norm(
        ensemble, curves.q_at, lambda snap: snap.lead, probes, "sup|Q(aN t)/kN - q(t)|"
    )


def compare_theorem2(
    ensemble: EnsembleReport, curves: TheoryCurves, probes: Optional[Sequence[float]] = None
) -> Dict[str, Any]:
    """As compare_theorem1 with the mean M and the curve m."""
    return _scaled_sup_norm(
        ensemble, curves.m_at, lambda snap: snap.mean, probes, "sup|M(aN t)/kN - m(t)|"
    )


@dataclass(frozen=True)
class ProfileFit:
    """Weighted least-squares fit of log(X_{j+l} / X_j) = linear * l + curvature * l**2."""

    curvature: float
    linear: float
    residuals: Dict[int, float]
    n_types: int


def fit_log_profile(profile: Mapping[int, float], min_count: float = 10) -> ProfileFit:
    """Fits the log profile around offset 0.

    `profile` maps the offset l to the count X_{j+l}. Offsets with fewer than
    `min_count` individuals are left out. There is no intercept, so the l = 0
    residual is zero. Weights are the inverse Poisson variances of the log ratios.
    """
    x0 = profile.get(0, 0)
    if x0 < min_count:
        raise TooFewTypes(f"reference type has {x0} < {min_count} individuals")
    usable = sorted(ell for ell, x in profile.items() if x >= min_count)
    if len(usable) < 3:
        raise TooFewTypes(f"only {len(usable)} types with >= {min_count} individuals: {usable}")

    ells = np.array(usable, dtype=float)
    counts = np.array([profile[ell] for ell in usable], dtype=float)
    y = np.log(counts / x0)
    A = np.column_stack([ells, ells**2])
    sw = np.sqrt(1.0 / (1.0 / counts + 1.0 / x0))
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    fitted = A @ coef
    residuals = {ell: float(r) for ell, r in zip(usable, (y - fitted).tolist())}
    return ProfileFit(float(coef[1]), float(coef[0]), residuals, len(usable))


def compare_theorem3(
    ensemble: EnsembleReport,
    curves: TheoryCurves,
    t: Optional[float] = None,
    ell_range: Optional[Sequence[int]] = None,
    min_count: Optional[int] = None,
) -> Dict[str, Any]:
    """Compares the fitted log profile around j(t) with the Gaussian prediction.

    The predicted curvature is -[log(s/mu)]**2 / (2 q(t - 1) log N) and the
    predicted linear coefficient is -2 d(t) times that.
    """
    settings = ensemble.config.verify
    t = settings.theorem3_t if t is None else float(t)
    if not (t > 1.0 and t != 2.0):
        raise ValueError(f"profile comparison needs t in (1, 2) or (2, inf), got {t}")
    if ell_range is None and settings.ell_max is not None:
        ell_range = range(-settings.ell_max, settings.ell_max + 1)
    min_count = settings.min_count if min_count is None else min_count

    sc = ensemble.scales()
    params = ensemble.params
    q_tm1 = float(curves.q_at(t - 1.0))
    predicted = predicted_curvature(q_tm1, params)

    curvatures: List[float] = []
    linear_errors: List[float] = []
    residuals: Dict[int, List[float]] = {}
    excluded = 0
    for rep in ensemble.replicates:
        try:
            snap = rep.snapshot_at(sc.a_N * t)
        except QueryOutOfRange:
            excluded += 1
            continue
        j_t, d_t = modal_type_and_offset(rep.taus, sc.a_N, sc.a_N * t)
        if j_t is None:
            excluded += 1
            continue
        offsets = ell_range if ell_range is not None else range(snap.j_min - j_t, snap.j_max - j_t + 1)
        profile = {ell: snap.count(j_t + ell) for ell in offsets}
        try:
            fit = fit_log_profile(profile, min_count)
        except TooFewTypes as err:
            _logger.debug(f"replicate {rep.index}: {err}")
            excluded += 1
            continue
        curvatures.append(fit.curvature)
        if d_t is not None:
            linear_errors.append(fit.linear - (-2.0 * d_t * predicted))
        for ell, r in fit.residuals.items():
            residuals.setdefault(ell, []).append(r)

    out: Dict[str, Any] = {
        "statistic": "fitted l**2 coefficient of log X_{j(t)+l}",
        "t": t,
        "q_tm1": q_tm1,
        "predicted_curvature": predicted,
        "excluded": excluded,
        "values": curvatures,
    }
    out.update(_summary_stats(curvatures))
    out["fraction_negative"] = (
        float(np.mean(np.asarray(curvatures) < 0.0)) if curvatures else None
    )
    out["ratio_to_predicted"] = out["median"] / predicted if curvatures else None
    out["linear_minus_predicted"] = _summary_stats(linear_errors)
    out["residuals"] = {
        ell: _summary_stats(values) for ell, values in sorted(residuals.items())
    }
    return out


@dataclass(frozen=True)
class SpacingStats:
    """Gaps tau_{j+1} - tau_j for j >= k* + 1 and the heuristic a_N / Q(tau_j) for each."""

    gaps: Tuple[float, ...]
    heuristic: Tuple[float, ...]
    inside: int
    lower: float
    upper: float

    @property
    def fraction_inside(self) -> Optional[float]:
        return self.inside / len(self.gaps) if self.gaps else None


def spacing_statistics(
    taus: Mapping[int, float], leads: Mapping[int, float], sc: Scales
) -> SpacingStats:
    lower = sc.a_N / (3.0 * sc.k_N)
    upper = 2.0 * sc.a_N / sc.k_N
    gaps: List[float] = []
    heuristic: List[float] = []
    for j in sorted(taus):
        if j < sc.k_star + 1 or (j + 1) not in taus:
            continue
        gaps.append(taus[j + 1] - taus[j])
        lead = leads.get(j, 0.0)
        heuristic.append(sc.a_N / lead if lead > 0.0 else math.nan)
    inside = sum(lower <= g <= upper for g in gaps)
    return SpacingStats(tuple(gaps), tuple(heuristic), inside, lower, upper)


def first_establishment_within(
    taus: Mapping[int, float], sc: Scales, end_time: float
) -> Optional[bool]:
    """Whether tau_{k*+1} <= 2a_N/k_N; None when the run ended before that could be decided."""
    bound = 2.0 * sc.a_N / sc.k_N
    tau = taus.get(sc.k_star + 1)
    if tau is not None:
        return tau <= bound
    return False if end_time >= bound else None


def compare_spacings(
    ensemble: EnsembleReport, curves: Optional[TheoryCurves] = None
) -> Dict[str, Any]:
    """Fraction of establishment gaps inside [a_N/3k_N, 2a_N/k_N] with its binomial SE.

    Also regresses the gaps on a_N/Q(tau_j), reports the fraction of
    replicates with tau_{k*+1} <= 2a_N/k_N and, when `curves` is given,
    reports sup over the snapshot grid of |R(a_N t)/k_N - q(t)|.
    """
    sc = ensemble.scales()
    gaps: List[float] = []
    heuristic: List[float] = []
    inside = 0
    r_values: List[float] = []
    first_bound = 2.0 * sc.a_N / sc.k_N
    first_held = first_n = 0
    for rep in ensemble.replicates:
        first = first_establishment_within(rep.taus, sc, rep.end_time)
        if first is not None:
            first_n += 1
            first_held += first
        st = spacing_statistics(rep.taus, rep.lead_at_tau, sc)
        gaps += st.gaps
        heuristic += st.heuristic
        inside += st.inside
        if curves is not None:
            grid = [snap.time for snap in rep.snapshots if snap.time / sc.a_N <= curves.t_max]
            if grid:
                observed = [renewal_count(rep.taus, sc, t) / sc.k_N for t in grid]
                predicted = curves.q_at(np.array(grid) / sc.a_N)
                r_values.append(sup_norm_statistic(observed, predicted))

    n = len(gaps)
    fraction = inside / n if n else None
    out: Dict[str, Any] = {
        "statistic": "fraction of gaps in [aN/3kN, 2aN/kN]",
        "n": n,
        "fraction_inside": fraction,
        "se": math.sqrt(fraction * (1.0 - fraction) / n) if n else None,
        "bounds": [sc.a_N / (3.0 * sc.k_N), 2.0 * sc.a_N / sc.k_N],
        "gaps": _summary_stats(gaps),
    }
    out["first_establishment"] = {
        "statistic": "tau_{k*+1} <= 2aN/kN",
        "bound": first_bound,
        **_fraction_stats(first_held, first_n),
    }

    pairs = [(h, g) for h, g in zip(heuristic, gaps) if math.isfinite(h)]
    if len(pairs) >= 3 and len({h for h, _ in pairs}) > 1:
        fit = stats.linregress([h for h, _ in pairs], [g for _, g in pairs])
        out["heuristic_regression"] = {
            "n": len(pairs),
            "slope": float(fit.slope),
            "slope_se": float(fit.stderr),
            "intercept": float(fit.intercept),
            "intercept_se": float(fit.intercept_stderr),
            "r": float(fit.rvalue),
            "p_value": float(fit.pvalue),
        }
    else:
        out["heuristic_regression"] = None
    if curves is not None:
        out["renewal_count"] = _summary_stats(r_values)
    return out


def compare_martingale(ensemble: EnsembleReport, band: Optional[float] = None) -> Dict[str, Any]:
    """Ensemble means of Z_j(t) against 0 and of Y_j(t) against Y_j(0), in units of SE."""
    settings = ensemble.config.verify
    band = settings.se_band if band is None else band
    reps = [rep for rep in ensemble.replicates if rep.martingale]
    if not reps:
        raise InsufficientResolution(
            "no replicate carries martingale values; run with dense_log and the martingale target"
        )
    times = (0.0,) + tuple(settings.martingale_times)

    def column(kind: str, j: int, k: int) -> List[float]:
        return [rep.martingale[kind][j][k] for rep in reps if len(rep.martingale[kind][j]) > k]

    z_checks = []
    y_checks = []
    passed = True
    for j in settings.martingale_types:
        y0 = _summary_stats(column("Y", j, 0))
        for k, t in enumerate(times[1:], start=1):
            z = _summary_stats(column("Z", j, k))
            if z["n"] < 2:
                continue
            z_ok = abs(z["mean"]) <= band * z["se"] if z["se"] else z["mean"] == 0.0
            z_checks.append({"j": j, "t": t, **z, "ok": z_ok})

            y = _summary_stats(column("Y", j, k))
            y_ok = y["mean"] <= y0["mean"] + band * (y["se"] or 0.0)
            y_checks.append({"j": j, "t": t, **y, "Y0": y0["mean"], "ok": y_ok})
            passed = passed and z_ok and y_ok
            if not (z_ok and y_ok):
                _logger.warning(f"martingale check failed at j={j} t={t}: Z={z} Y={y}")

    return {
        "statistic": f"|mean Z_j(t)| <= {band} SE and mean Y_j(t) <= Y_j(0) + {band} SE",
        "n": len(reps),
        "Z": z_checks,
        "Y": y_checks,
        "passed": passed and bool(z_checks),
    }


def _engine_task(params: ModelParams, engine: str, seed: int, t: float) -> Tuple[int, int]:
    traj = run(
        params,
        RunSchedule(t, (t,), threshold_watch=False),
        seed,
        engine=engine,
        dense_log=False,
    )
    snap = traj.snapshots[-1] if traj.snapshots else Snapshot.of(traj.final_state, t)
    decile = min(9, (10 * snap.count(0)) // params.N)
    return decile, snap.j_max


def _merge_rare_columns(table: np.ndarray, min_expected: float = 5.0) -> np.ndarray:
    """Pools columns whose expected cell counts fall below `min_expected` into one column."""
    totals = table.sum(axis=0)
    expected_min = totals * table.sum(axis=1).min() / table.sum()
    rare = expected_min < min_expected
    if not rare.any():
        return table
    pooled = table[:, rare].sum(axis=1, keepdims=True)
    kept = table[:, ~rare]
    return np.hstack([kept, pooled]) if pooled.sum() > 0 else kept


def compare_engines(
    config: ExperimentConfig,
    replicates: Optional[int] = None,
    t: Optional[float] = None,
    workers: Optional[int] = None,
) -> Dict[str, Any]:
    """Chi-square homogeneity of (X_0 decile, j_max) at time t between the two engines.

    Engine k uses replicate indices [k R, (k + 1) R) so no two runs share a stream.
    """
    settings = config.verify
    R = settings.engine_replicates if replicates is None else replicates
    t = settings.engine_time if t is None else t
    workers = workers or config.workers or utils.default_workers()

    outcomes: Dict[str, List[Tuple[int, int]]] = {}
    for k, engine in enumerate(ENGINES):
        args = [
            (config.params, engine, seed_for_replicate(config.master_seed, k * R + i), t)
            for i in range(R)
        ]
        outcomes[engine] = _execute(_engine_task, args, min(workers, R), f"engine {engine}")

    cells = sorted({cell for values in outcomes.values() for cell in values})
    position = {cell: c for c, cell in enumerate(cells)}
    table = np.zeros((len(ENGINES), len(cells)), dtype=float)
    for r, engine in enumerate(ENGINES):
        for cell in outcomes[engine]:
            table[r, position[cell]] += 1
    merged = _merge_rare_columns(table)

    if merged.shape[1] < 2:
        # both engines put every run in the same cell
        chi2, p_value, dof = 0.0, 1.0, 0
    else:
        chi2, p_value, dof, _ = stats.chi2_contingency(merged)
    return {
        "statistic": "chi-square homogeneity of (X_0 decile, j_max)",
        "n": R,
        "t": t,
        "cells": len(cells),
        "merged_cells": int(merged.shape[1]),
        "chi2": float(chi2),
        "dof": int(dof),
        "p_value": float(p_value),
        "alpha": ENGINE_ALPHA,
        "passed": bool(p_value >= ENGINE_ALPHA),
    }


def early_phase_bounds(
    taus: Mapping[int, float],
    first_seen: Mapping[int, float],
    sc: Scales,
    end_time: float,
) -> Tuple[Optional[bool], Optional[bool]]:
    """Whether X_{k*} < s/mu on [0, t*], and whether no type j >= k_N^+ exists on [0, t*].

    X_{k*} first reaches s/mu at tau_{k*+1}, and the first type at or above
    k_N^+ appears when the fittest type first reaches ceil(k_N^+). Either
    answer is None when the run ended before t* without deciding it.
    """
    decided = end_time >= sc.t_star

    def before_t_star(value: Optional[float]) -> Optional[bool]:
        if value is not None:
            return value > sc.t_star
        return True if decided else None

    below_threshold = before_t_star(taus.get(sc.k_star + 1))
    no_high_types = before_t_star(first_seen.get(math.ceil(sc.k_N_plus)))
    return below_threshold, no_high_types


def compare_early(ensemble: EnsembleReport) -> Dict[str, Any]:
    """Ratios X_j(t) / x_j(t) for 1 <= j <= k_N^- and t <= t*, where x_j(t) >= s/mu.

    Also reports the fractions of replicates in which X_{k*} stays below s/mu
    and no type j >= k_N^+ appears before t*.
    """
    sc = ensemble.scales()
    params = ensemble.params
    threshold = params.s / params.mu
    types = range(1, int(math.floor(sc.k_N_minus)) + 1)
    ratios: List[float] = []
    below = [0, 0]
    absent = [0, 0]
    for rep in ensemble.replicates:
        for snap in rep.snapshots:
            if not 0.0 < snap.time <= sc.t_star:
                continue
            for j in types:
                x = early_curve(j, snap.time, params)
                if x >= threshold:
                    ratios.append(snap.count(j) / x)
        below_threshold, no_high_types = early_phase_bounds(
            rep.taus, rep.first_seen, sc, rep.end_time
        )
        for tally, held in ((below, below_threshold), (absent, no_high_types)):
            if held is not None:
                tally[0] += held
                tally[1] += 1
    factor = ensemble.config.verify.early_factor
    out: Dict[str, Any] = {
        "statistic": "X_j(t) / x_j(t), 1 <= j <= kN-, t <= t*",
        "types": list(types),
        "t_star": sc.t_star,
        "values": ratios,
    }
    out.update(_summary_stats(ratios))
    out["k_star_below_threshold"] = _fraction_stats(*below)
    out["no_types_above_kN_plus"] = _fraction_stats(*absent)
    out["passed"] = bool(ratios) and 1.0 / factor <= out["median"] <= factor
    return out


def _gamma(taus: Mapping[int, float], a_N: float, j: int) -> float:
    # an unrecorded tau_j lies beyond the end of the run
    tau = taus.get(j)
    return math.inf if tau is None else tau + a_N


@dataclass(frozen=True)
class MeanStats:
    """Checks on M(t) over the snapshots of one replicate.

    below_early holds if M(t) < 3 exp(-s(a_N - t)) at every snapshot in
    (t*, a_N]. excess lists M(t) - k_N on (a_N, gamma_{k*+1}). envelope lists
    |M(t) - j| / (exp(-s(t - gamma_j)) + exp(-s(gamma_{j+1} - t))) for t in
    [gamma_j, gamma_{j+1}), j >= k* + 1. lagging holds if M(t) < j - 1 on
    [tau_j, tau_{j+1}) for every j >= k* + 1. A check with no snapshot in its
    window is None.
    """

    below_early: Optional[bool]
    excess: Tuple[float, ...]
    envelope: Tuple[float, ...]
    lagging: Optional[bool]


def mean_statistics(
    snapshots: Sequence[Snapshot], taus: Mapping[int, float], sc: Scales, s: float
) -> MeanStats:
    a_N = sc.a_N
    first = sc.k_star + 1
    later = sorted(j for j in taus if j >= first)
    below_early: Optional[bool] = None
    lagging: Optional[bool] = None
    excess: List[float] = []
    envelope: List[float] = []
    for snap in snapshots:
        t, M = snap.time, snap.mean
        if sc.t_star < t <= a_N:
            below_early = (below_early is not False) and M < 3.0 * math.exp(-s * (a_N - t))
        if a_N < t < _gamma(taus, a_N, first):
            excess.append(M - sc.k_N)
        for j in later:
            lo, hi = taus[j] + a_N, _gamma(taus, a_N, j + 1)
            if lo <= t < hi:
                width = math.exp(-s * (t - lo)) + math.exp(-s * (hi - t))
                envelope.append(abs(M - j) / width)
            if taus[j] <= t < taus.get(j + 1, math.inf):
                lagging = (lagging is not False) and M < j - 1
    return MeanStats(below_early, tuple(excess), tuple(envelope), lagging)


def compare_mean(ensemble: EnsembleReport) -> Dict[str, Any]:
    """Replicate fractions for the bounds on M(t) and the spread of the envelope ratios."""
    sc = ensemble.scales()
    s = ensemble.params.s
    early = [0, 0]
    lag = [0, 0]
    excess: List[float] = []
    envelope: List[float] = []
    for rep in ensemble.replicates:
        st = mean_statistics(rep.snapshots, rep.taus, sc, s)
        for tally, held in ((early, st.below_early), (lag, st.lagging)):
            if held is not None:
                tally[0] += held
                tally[1] += 1
        if st.excess:
            excess.append(max(st.excess))
        if st.envelope:
            envelope.append(max(st.envelope))

    target = ensemble.config.verify.proposition_fraction
    out: Dict[str, Any] = {
        "statistic": "bounds on M(t) between establishment times",
        "below_early_bound": _fraction_stats(*early),
        "lagging_behind_tau": _fraction_stats(*lag),
        "max_excess_over_kN": _summary_stats(excess),
        "max_envelope_ratio": _summary_stats(envelope),
        "required_fraction": target,
    }
    fractions = [out["below_early_bound"]["fraction"], out["lagging_behind_tau"]["fraction"]]
    out["n"] = len(ensemble.replicates)
    out["passed"] = all(f is not None and f >= target for f in fractions)
    return out


@dataclass(frozen=True)
class GrowthPoint:
    """X_j(t) against its exponential-growth prediction."""

    j: int
    t: float
    observed: int
    predicted: float

    @property
    def ratio(self) -> float:
        return self.observed / self.predicted


def growth_integral(
    j: int, t1: float, t2: float, area1: float, area2: float, s: float, mu: float
) -> float:
    """int_{t1}^{t2} G_j with G_j = s(j - M) - mu, given the integrals of M up to t1 and t2."""
    return (s * j - mu) * (t2 - t1) - s * (area2 - area1)


def growth_points(
    snapshots: Sequence[Snapshot],
    taus: Mapping[int, float],
    area_at_tau: Mapping[int, float],
    sc: Scales,
    params: ModelParams,
    min_count: float,
) -> List[GrowthPoint]:
    """Snapshot counts against exponential growth at rate G_j from a known start.

    Types j <= k* start from X_j(t*) and are followed up to gamma_{k*+K};
    types j >= k* + 1 start from s/mu at tau_{j+1} and are followed up to
    gamma_{j+K}, with K = floor(k_N / 4). Predictions below `min_count` are
    left out.
    """
    s, mu, a_N = params.s, params.mu, sc.a_N
    K = math.floor(sc.k_N / 4)
    try:
        start = find_snapshot(snapshots, sc.t_star)
    except QueryOutOfRange:
        return []

    origins: Dict[int, Tuple[float, float, float, float]] = {}
    for j in range(sc.k_star + 1):
        stop = _gamma(taus, a_N, sc.k_star + K)
        origins[j] = (start.time, start.mean_area, float(start.count(j)), stop)
    for j in taus:
        if j >= sc.k_star + 1 and (j + 1) in area_at_tau:
            stop = _gamma(taus, a_N, j + K)
            origins[j] = (taus[j + 1], area_at_tau[j + 1], s / mu, stop)

    points: List[GrowthPoint] = []
    for snap in snapshots:
        for j, (t0, area0, x0, stop) in origins.items():
            if not t0 <= snap.time <= stop or x0 <= 0.0:
                continue
            log_growth = growth_integral(j, t0, snap.time, area0, snap.mean_area, s, mu)
            predicted = x0 * math.exp(min(log_growth, 700.0))
            if predicted >= min_count:
                points.append(GrowthPoint(j, snap.time, snap.count(j), predicted))
    return points


def compare_growth(ensemble: EnsembleReport) -> Dict[str, Any]:
    """Fractions of growth points whose ratio to the prediction lies within 1 +- growth_delta."""
    sc = ensemble.scales()
    settings = ensemble.config.verify
    delta = settings.growth_delta
    held_points = n_points = 0
    held_reps = n_reps = 0
    ratios: List[float] = []
    for rep in ensemble.replicates:
        points = growth_points(
            rep.snapshots, rep.taus, rep.area_at_tau, sc, ensemble.params, settings.min_count
        )
        if not points:
            continue
        ok = [abs(p.ratio - 1.0) <= delta for p in points]
        held_points += sum(ok)
        n_points += len(ok)
        held_reps += all(ok)
        n_reps += 1
        ratios += [p.ratio for p in points]

    out: Dict[str, Any] = {
        "statistic": f"|X_j(t) / prediction - 1| <= {delta}",
        "points": _fraction_stats(held_points, n_points),
        "replicates": _fraction_stats(held_reps, n_reps),
        "ratios": _summary_stats(ratios),
        "required_fraction": settings.proposition_fraction,
    }
    out["n"] = n_reps
    fraction = out["points"]["fraction"]
    out["passed"] = fraction is not None and fraction >= settings.proposition_fraction
    return out


def compare_speed(ensemble: EnsembleReport) -> Dict[str, Any]:
    """Slope of M(t) over the second half of the horizon against the predicted speeds."""
    pr = predictions(ensemble.params)
    horizon = ensemble.config.horizon()
    slopes: List[float] = []
    for rep in ensemble.replicates:
        late = [snap for snap in rep.snapshots if snap.time >= horizon / 2]
        if len(late) < 3:
            continue
        fit = stats.linregress([snap.time for snap in late], [snap.mean for snap in late])
        slopes.append(float(fit.slope))
    out: Dict[str, Any] = {"statistic": "slope of M(t) on the second half of the horizon", "values": slopes}
    out.update(_summary_stats(slopes))
    out["predicted"] = {"speed": pr.speed, "dfSpeed": pr.df_speed, "rbwSpeed": pr.rbw_speed}
    out["ratio_to_predicted"] = (
        {key: out["median"] / value for key, value in out["predicted"].items()} if slopes else None
    )
    out["passed"] = bool(slopes)
    return out


class TrendRuns:
    """Ensembles of a config at each N of verify.n_values, run at most once per N.

    The main ensemble is reused for its own N. The other ensembles leave out
    the martingale values, which no trend check reads.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        workers: Optional[int] = None,
        main: Optional[EnsembleReport] = None,
    ):
        self.config = config
        self.workers = workers
        self._reports: Dict[int, EnsembleReport] = {}
        if main is not None and main.replicates:
            self._reports[config.params.N] = main

    def report(self, N: int) -> EnsembleReport:
        if N not in self._reports:
            settings = self.config.verify
            sub = replace(
                self.config,
                params=replace(self.config.params, N=N),
                verify=replace(
                    settings, targets=tuple(t for t in settings.targets if t != "martingale")
                ),
            )
            self._reports[N] = run_ensemble(sub, self.workers)
        return self._reports[N]

    def points(
        self, statistic: Callable[[EnsembleReport], Optional[float]]
    ) -> List[Tuple[int, Optional[float]]]:
        points = []
        for N in self.config.verify.n_values:
            value = statistic(self.report(N))
            _logger.info(f"trend point N={N}: {value}")
            points.append((N, value))
        return points


def _monotone(values: Sequence[Optional[float]], decreasing: bool) -> bool:
    if len(values) < 2 or any(v is None for v in values):
        return False
    pairs = zip(values, values[1:])
    return all(b < a for a, b in pairs) if decreasing else all(b >= a for a, b in pairs)


def default_curves(config: ExperimentConfig) -> TheoryCurves:
    sc = config.scales()
    needed = max((*config.verify.probes, config.verify.theorem3_t, 2.0))
    if sc is not None:
        needed = max(needed, config.horizon() / sc.a_N)
    return cached_curves(DEFAULT_H, max(DEFAULT_T_MAX, math.ceil(needed) + 1.0))


def verify(
    config: ExperimentConfig,
    targets: Optional[Sequence[str]] = None,
    curves: Optional[TheoryCurves] = None,
    workers: Optional[int] = None,
) -> EnsembleReport:
    """Runs one ensemble and the requested comparisons; each statistic records `passed`.

    With verify.n_values set, theorem1, theorem2 and spacings also check the
    trend in N over one ensemble per N, shared between the targets.
    """
    targets = tuple(targets if targets is not None else config.verify.targets)
    unknown = [t for t in targets if t not in TARGETS]
    if unknown:
        raise ConfigError(f"unknown verification targets {unknown}, expected some of {TARGETS}")
    config = replace(config, verify=replace(config.verify, targets=targets))
    settings = config.verify

    ensemble_targets = [t for t in targets if t != "engines"]
    if ensemble_targets:
        report = run_ensemble(config, workers)
    else:
        report = EnsembleReport(config=config, replicates=[])
    if curves is None and set(targets) & {"theorem1", "theorem2", "theorem3", "spacings"}:
        curves = default_curves(config)
    trend_runs = TrendRuns(config, workers, report)

    for target in targets:
        if target == "theorem1" or target == "theorem2":
            compare = compare_theorem1 if target == "theorem1" else compare_theorem2
            stat = compare(report, curves)
            stat["passed"] = stat["n"] > 0 and math.isfinite(stat["median"])
            if settings.n_values:
                trend = trend_runs.points(lambda e: compare(e, curves)["median"])
                stat["trend"] = [{"N": N, "median": v} for N, v in trend]
                stat["passed"] = _monotone([v for _, v in trend], decreasing=True)
        elif target == "theorem3":
            stat = compare_theorem3(report, curves)
            fraction = stat["fraction_negative"]
            ratio = stat["ratio_to_predicted"]
            factor = settings.curvature_factor
            stat["passed"] = (
                fraction is not None
                and fraction >= settings.curvature_fraction
                and 1.0 / factor <= ratio <= factor
            )
        elif target == "spacings":
            stat = compare_spacings(report, curves)
            fraction = stat["fraction_inside"]
            stat["passed"] = fraction is not None and fraction >= settings.spacing_threshold
            if settings.n_values:
                trend = trend_runs.points(lambda e: compare_spacings(e)["fraction_inside"])
                stat["trend"] = [{"N": N, "fraction_inside": v} for N, v in trend]
                stat["passed"] = stat["passed"] and _monotone(
                    [v for _, v in trend], decreasing=False
                )
        elif target == "martingale":
            stat = compare_martingale(report)
        elif target == "engines":
            stat = compare_engines(config, workers=workers)
        elif target == "early":
            stat = compare_early(report)
        elif target == "mean":
            stat = compare_mean(report)
        elif target == "growth":
            stat = compare_growth(report)
        else:
            stat = compare_speed(report)

        report.statistics[target] = stat
        if stat["passed"]:
            _logger.info(f"verify {target}: passed")
        else:
            _logger.warning(f"verify {target}: FAILED")
    return report
