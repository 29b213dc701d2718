"""Run configuration and the design / perturb / evaluate / sweep commands.

Everything here is deterministic from (config, input files): trial t derives
its seed as seed XOR t, the train/test split uses a salted stream so it never
collides with the perturbation stream, JSON is always written with sorted
keys, and parallel trial execution sorts results before aggregating so it is
byte-identical to the serial path.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .binary_design import opt_binary
from .dataset import COMMENT_PREFIX, ColumnsConfig, ingest_csv
from .distribution import (
    JointDistribution,
    delta,
    delta_prime,
    estimate_distribution,
)
from .errors import (
    ConfigError,
    DataError,
    InvalidEpsilon,
    NotBinary,
    NumericalFailure,
)
from .evaluation import Calibration, TrainConfig, evaluate, train_logistic
from .kary_design import SolverConfig, min_achievable_error, solve_opt_k
from .mechanisms import (
    MechanismMatrix,
    SsParams,
    grr_matrix,
    induced_distribution,
    matrix_of_binary,
    perturb_dataset,
    privacy_level,
    rr_mechanism,
    ss_induced_distribution,
    ss_params,
    ss_privacy_level,
    verify_ldp,
)

SCHEMA_VERSION = 1
SPLIT_SALT = 0x9E3779B97F4A7C15
METRICS = ("accuracy", "sp_gap", "eo_gap", "meo_gap", "eod_gap")
MAX_SEED = 2**63


class Mechanism(Enum):
    NON_PRIVATE = "NonPrivate"
    RR = "RR"
    GRR = "GRR"
    SS = "SS"
    OPT_BINARY = "OptBinary"
    OPT_KARY = "OptKary"


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.75
    trials: int = 20

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, got {self.trials}")


@dataclass(frozen=True)
class EvalSettings:
    calibration: str = "base_rate_match"
    sensitive_as_feature: bool = True
    skip_undefined_groups: bool = False

    def __post_init__(self):
        if self.calibration not in ("fixed", "base_rate_match"):
            raise ConfigError(f"unknown calibration {self.calibration!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; one JSON file pins every output byte."""

    data: str
    columns: ColumnsConfig
    mechanism: Mechanism
    seed: int
    epsilon: float | None = None
    zeta: float | None = None
    split: SplitConfig = field(default_factory=SplitConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < MAX_SEED:
            raise ConfigError("seed must be an integer in [0, 2^63)")
        if self.mechanism is not Mechanism.NON_PRIVATE:
            if self.epsilon is None:
                raise ConfigError(f"{self.mechanism.value} requires epsilon")
            if not math.isfinite(self.epsilon) or self.epsilon <= 0.0:
                raise InvalidEpsilon(self.epsilon)
        if self.mechanism is Mechanism.OPT_KARY:
            if self.zeta is None:
                raise ConfigError("OptKary requires zeta (the error budget)")
            if not 0.0 <= self.zeta <= 1.0:
                raise ConfigError(f"zeta must lie in [0, 1], got {self.zeta}")

    def to_json_dict(self) -> dict:
        return {
            "data": self.data,
            "columns": {
                "sensitive": self.columns.sensitive,
                "label": self.columns.label,
                "positive_label": self.columns.positive_label,
                "features": self.columns.features,
                "sensitive_order": self.columns.sensitive_order,
            },
            "mechanism": self.mechanism.value,
            "epsilon": self.epsilon,
            "zeta": self.zeta,
            "seed": self.seed,
            "split": {
                "train_fraction": self.split.train_fraction,
                "trials": self.split.trials,
            },
            "eval": {
                "calibration": self.eval.calibration,
                "sensitive_as_feature": self.eval.sensitive_as_feature,
                "skip_undefined_groups": self.eval.skip_undefined_groups,
            },
        }


_TOP_KEYS = {"data", "columns", "mechanism", "epsilon", "zeta", "seed", "split", "eval"}


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("data", "columns", "mechanism"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    cols = raw["columns"]
    if not isinstance(cols, dict):
        raise ConfigError("columns must be an object")
    try:
        columns = ColumnsConfig(
            sensitive=cols["sensitive"],
            label=cols["label"],
            positive_label=str(cols["positive_label"]),
            features=cols.get("features", "auto"),
            sensitive_order=cols.get("sensitive_order"),
        )
    except KeyError as missing:
        raise ConfigError(f"columns is missing {missing}") from None
    try:
        mechanism = Mechanism(raw["mechanism"])
    except ValueError:
        names = [m.value for m in Mechanism]
        raise ConfigError(
            f"unknown mechanism {raw['mechanism']!r}; expected one of {names}"
        ) from None
    split_raw = raw.get("split", {})
    eval_raw = raw.get("eval", {})
    epsilon = raw.get("epsilon")
    zeta = raw.get("zeta")
    return RunConfig(
        data=str(raw["data"]),
        columns=columns,
        mechanism=mechanism,
        seed=int(raw.get("seed", 0)),
        epsilon=None if epsilon is None else float(epsilon),
        zeta=None if zeta is None else float(zeta),
        split=SplitConfig(
            train_fraction=float(split_raw.get("train_fraction", 0.75)),
            trials=int(split_raw.get("trials", 20)),
        ),
        eval=EvalSettings(
            calibration=eval_raw.get("calibration", "base_rate_match"),
            sensitive_as_feature=bool(eval_raw.get("sensitive_as_feature", True)),
            skip_undefined_groups=bool(eval_raw.get("skip_undefined_groups", False)),
        ),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file and apply flat overrides on top (flags win)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("data", "mechanism", "epsilon", "zeta", "seed"):
            raw[key] = value
        elif key in ("train_fraction", "trials"):
            raw.setdefault("split", {})[key] = value
        elif key in ("calibration", "sensitive_as_feature", "skip_undefined_groups"):
            raw.setdefault("eval", {})[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    return config_from_dict(raw)


def render_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(render_json(payload), encoding="utf-8")


def _finite_or_none(value: float) -> float | None:
    value = float(value)
    return value if math.isfinite(value) else None


def design_mechanism(dist, config: RunConfig) -> tuple[MechanismMatrix | SsParams, dict]:
    """Build the configured mechanism for dist; returns (mechanism, extras).

    extras carries the designer's own report (branch case or solver
    certificate) for mechanisms that have one.
    """
    k = dist.k
    if config.mechanism is Mechanism.NON_PRIVATE:
        return MechanismMatrix(k, np.eye(k)), {}
    eps = config.epsilon
    if config.mechanism is Mechanism.RR:
        if k != 2:
            raise NotBinary(k)
        return matrix_of_binary(rr_mechanism(eps)), {}
    if config.mechanism is Mechanism.GRR:
        return grr_matrix(k, eps), {}
    if config.mechanism is Mechanism.SS:
        return ss_params(k, eps), {}
    if config.mechanism is Mechanism.OPT_BINARY:
        if k != 2:
            raise NotBinary(k)
        res = opt_binary(dist, eps)
        design = res.to_json_dict()
        design["relabeled"] = res.relabeled
        return matrix_of_binary(res.mechanism), {"design": design}
    res = solve_opt_k(dist, SolverConfig(epsilon=eps, zeta=config.zeta))
    return res.Q, {"design": res.to_json_dict()}


def _check_emitted_mechanism(mech, epsilon: float | None) -> float | None:
    """Audit before writing; returns the exact privacy level (None if infinite)."""
    if isinstance(mech, SsParams):
        level = ss_privacy_level(mech)
        if abs(level - mech.epsilon) > 1e-9:
            raise NumericalFailure(
                f"subset mechanism privacy level {level} drifted from {mech.epsilon}"
            )
        return level
    level = privacy_level(mech)
    if epsilon is not None and not verify_ldp(mech, epsilon):
        raise NumericalFailure(
            f"designed mechanism violates the privacy bound at epsilon={epsilon}"
        )
    return _finite_or_none(level)


def cmd_design(config: RunConfig, out_path: str | Path | None = None) -> dict:
    """Design the configured mechanism from the file's empirical distribution.

    The report carries the mechanism itself, its exact privacy level, the
    predicted data-unfairness of the induced distribution, the smallest error
    budget any compliant mechanism could meet at this epsilon, and the GRR/SS
    baselines at the same budget for comparison.
    """
    dataset = ingest_csv(config.data, config.columns)
    dist = estimate_distribution(dataset)
    mech, extras = design_mechanism(dist, config)
    eps_star = _check_emitted_mechanism(mech, config.epsilon)

    if isinstance(mech, SsParams):
        entries = None
        induced = ss_induced_distribution(dist, mech)
        predicted = {
            "delta": float(delta(induced)),
            "delta_prime": float(delta_prime(induced)),
        }
        ss = {
            "omega": mech.omega,
            "p_true": mech.p_true,
            "p_off": mech.p_off,
            "k": mech.k,
            "epsilon": mech.epsilon,
        }
    else:
        entries = mech.entries.tolist()
        induced = induced_distribution(dist, mech)
        predicted = {
            "delta": float(delta(induced)),
            "delta_prime": float(delta_prime(induced)),
        }
        ss = None

    baselines = None
    if config.epsilon is not None:
        grr = grr_matrix(dist.k, config.epsilon)
        sp = ss_params(dist.k, config.epsilon)
        baselines = {
            "grr": {
                "entries": grr.entries.tolist(),
                "predicted_delta_prime": float(
                    delta_prime(induced_distribution(dist, grr))
                ),
            },
            "ss": {"omega": sp.omega, "p_true": sp.p_true, "p_off": sp.p_off},
        }

    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_json_dict(),
        "mechanism": config.mechanism.value,
        "epsilon": config.epsilon,
        "zeta": config.zeta,
        "k": dist.k,
        "dist": {
            "group_probs": dist.group_probs.tolist(),
            "pos_rates": dist.pos_rates.tolist(),
        },
        "entries": entries,
        "ss": ss,
        "eps_star": eps_star,
        "predicted": predicted,
        "min_achievable_error": (
            None
            if config.epsilon is None
            else float(min_achievable_error(dist, config.epsilon))
        ),
        "baselines": baselines,
        **extras,
    }
    if out_path is not None:
        write_json(payload, out_path)
    return payload


def mechanism_from_payload(payload: dict) -> MechanismMatrix | SsParams:
    """Rebuild the mechanism object a design report describes."""
    if payload.get("ss") is not None:
        ss = payload["ss"]
        return ss_params(int(ss["k"]), float(ss["epsilon"]))
    entries = payload.get("entries")
    if entries is None:
        raise DataError("design report has neither entries nor subset parameters")
    return MechanismMatrix(int(payload["k"]), np.array(entries, dtype=float))


def _payload_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()[:16]


def _read_raw_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [
            row
            for row in csv.reader(fh)
            if row and not row[0].startswith(COMMENT_PREFIX)
        ]
    if not rows:
        raise DataError(f"{path} has no rows")
    return rows[0], rows[1:]


def cmd_perturb(
    config: RunConfig, mechanism_path: str | Path, out_path: str | Path
) -> dict:
    """Rewrite the input CSV with the sensitive column perturbed.

    Every byte outside the sensitive column is copied from the input
    unchanged.  A value-valued mechanism replaces each sensitive cell with
    the drawn literal; the subset mechanism replaces the column with k 0/1
    indicator columns.  The leading comment line records the seed and the
    design-report hash so outputs are attributable.
    """
    try:
        with open(mechanism_path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"mechanism file not found: {mechanism_path}") from None
    except json.JSONDecodeError as err:
        raise DataError(f"mechanism file is not valid JSON: {err}") from None
    mech = mechanism_from_payload(payload)
    dataset = ingest_csv(config.data, config.columns)
    result = perturb_dataset(dataset, mech, config.seed)

    header, rows = _read_raw_rows(config.data)
    sens_idx = header.index(config.columns.sensitive)
    stamp = f"{COMMENT_PREFIX} seed={config.seed} mechanism={_payload_hash(payload)}"

    out_lines: list[list[str]] = []
    if isinstance(mech, SsParams):
        names = [
            f"{dataset.sensitive_name}={v}" for v in dataset.sensitive_values
        ]
        out_lines.append(
            header[:sens_idx] + names + header[sens_idx + 1 :]
        )
        indicators = np.stack(
            [result.indicator_columns[name] for name in names], axis=1
        ).astype(int)
        for i, row in enumerate(rows):
            cells = [str(v) for v in indicators[i]]
            out_lines.append(row[:sens_idx] + cells + row[sens_idx + 1 :])
    else:
        out_lines.append(header)
        for i, row in enumerate(rows):
            new = list(row)
            new[sens_idx] = dataset.sensitive_values[int(result.sensitive[i])]
            out_lines.append(new)

    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(stamp + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(out_lines)
    return {
        "schema_version": SCHEMA_VERSION,
        "out": str(out_path),
        "rows": len(rows),
        "seed": config.seed,
        "mechanism_hash": _payload_hash(payload),
    }


def _train_config(settings: EvalSettings) -> TrainConfig:
    return TrainConfig(
        calibration=Calibration(settings.calibration),
        sensitive_as_feature=settings.sensitive_as_feature,
    )


def _summarize(rows: list[dict]) -> dict:
    summary = {}
    for metric in METRICS:
        values = [row[metric] for row in rows]
        if any(v is None for v in values):
            summary[metric] = {"mean": None, "ci_low": None, "ci_high": None}
            continue
        arr = np.asarray(values, dtype=float)
        mean = float(arr.mean())
        if arr.size > 1:
            half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
        else:
            half = 0.0
        summary[metric] = {
            "mean": mean,
            "ci_low": mean - half,
            "ci_high": mean + half,
        }
    return summary


def cmd_evaluate(
    config: RunConfig, parallel: bool = False, out_path: str | Path | None = None
) -> dict:
    """Run trials x (split, perturb train only, train, evaluate on raw test).

    The mechanism is designed once from the whole file's empirical
    distribution and reused across trials.  Trial t splits with a generator
    seeded by (seed XOR t) XOR a fixed salt and perturbs with seed XOR t, so
    mechanisms sharing a config see identical splits and the two streams
    never collide.  The summary reports mean and a 95% normal-approximation
    confidence interval per metric.
    """
    dataset = ingest_csv(config.data, config.columns)
    if dataset.n < 2:
        raise DataError("need at least two records to split")
    if config.mechanism is Mechanism.NON_PRIVATE:
        mech = None
    else:
        dist = estimate_distribution(dataset)
        mech, _ = design_mechanism(dist, config)
        _check_emitted_mechanism(mech, config.epsilon)
    tconf = _train_config(config.eval)

    def run_trial(t: int) -> dict:
        trial_seed = config.seed ^ t
        rng = np.random.default_rng(trial_seed ^ SPLIT_SALT)
        perm = rng.permutation(dataset.n)
        n_train = int(round(config.split.train_fraction * dataset.n))
        n_train = min(max(n_train, 1), dataset.n - 1)
        train = dataset.subset(perm[:n_train])
        test = dataset.subset(perm[n_train:])
        if mech is not None:
            train = perturb_dataset(train, mech, trial_seed)
        model = train_logistic(train, tconf)
        report = evaluate(
            model, test, skip_undefined=config.eval.skip_undefined_groups
        )
        row = {"trial": t, "seed": trial_seed}
        values = {
            "accuracy": report.accuracy,
            "sp_gap": report.sp_gap,
            "eo_gap": report.eo_gap,
            "meo_gap": report.meo_gap,
            "eod_gap": report.eod_gap,
        }
        for name, value in values.items():
            row[name] = None if math.isnan(value) else float(value)
        return row

    trials = range(config.split.trials)
    if parallel:
        with ThreadPoolExecutor(max_workers=min(8, config.split.trials)) as pool:
            rows = list(pool.map(run_trial, trials))
    else:
        rows = [run_trial(t) for t in trials]
    rows.sort(key=lambda row: row["trial"])

    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_json_dict(),
        "mechanism": config.mechanism.value,
        "epsilon": config.epsilon,
        "summary": _summarize(rows),
        "trials": rows,
    }
    if out_path is not None:
        write_json(payload, out_path)
    return payload


def trials_csv(payload: dict) -> str:
    """Per-trial rows of an evaluate report as a CSV table."""
    lines = ["trial,seed," + ",".join(METRICS)]
    for row in payload["trials"]:
        cells = [str(row["trial"]), str(row["seed"])]
        cells += ["" if row[m] is None else repr(row[m]) for m in METRICS]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_sweep(
    config: RunConfig,
    epsilons: list[float],
    mechanisms: list[Mechanism | str] | None = None,
    parallel: bool = False,
    out_path: str | Path | None = None,
) -> dict:
    """Evaluate every (mechanism, epsilon) pair into one long-format table."""
    if not epsilons:
        raise ConfigError("sweep needs a non-empty epsilon list")
    for eps in epsilons:
        if not math.isfinite(eps) or eps <= 0.0:
            raise InvalidEpsilon(eps)
    mech_list = []
    for m in mechanisms or [config.mechanism]:
        if isinstance(m, Mechanism):
            mech_list.append(m)
            continue
        try:
            mech_list.append(Mechanism(m))
        except ValueError:
            names = [x.value for x in Mechanism]
            raise ConfigError(
                f"unknown mechanism {m!r}; expected one of {names}"
            ) from None
    rows = []
    for mech in mech_list:
        for eps in epsilons:
            sub = replace(config, mechanism=mech, epsilon=float(eps))
            report = cmd_evaluate(sub, parallel=parallel)
            for metric in METRICS:
                stats = report["summary"][metric]
                rows.append(
                    {
                        "mechanism": mech.value,
                        "epsilon": float(eps),
                        "metric": metric,
                        "mean": stats["mean"],
                        "ci_low": stats["ci_low"],
                        "ci_high": stats["ci_high"],
                    }
                )
    payload = {"schema_version": SCHEMA_VERSION, "rows": rows}
    if out_path is not None:
        write_json(payload, out_path)
    return payload


def sweep_csv(payload: dict) -> str:
    lines = ["mechanism,epsilon,metric,mean,ci_low,ci_high"]
    for row in payload["rows"]:
        cells = [row["mechanism"], repr(row["epsilon"]), row["metric"]]
        cells += [
            "" if row[key] is None else repr(row[key])
            for key in ("mean", "ci_low", "ci_high")
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_verify(
    design_path: str | Path, report_path: str | Path | None = None
) -> dict:
    """Re-audit an existing design report (and optionally an evaluate report).

    Rechecks the privacy bound and recomputes every derived number in the
    design report from its own recorded distribution; for an evaluate report
    it recomputes the summary from the per-trial rows.
    """
    try:
        with open(design_path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"design report not found: {design_path}") from None
    except json.JSONDecodeError as err:
        raise DataError(f"design report is not valid JSON: {err}") from None

    checks: dict[str, bool] = {}
    epsilon = payload.get("epsilon")
    dist = JointDistribution.from_rates(
        payload["dist"]["group_probs"], payload["dist"]["pos_rates"]
    )
    if payload.get("ss") is not None:
        mech = mechanism_from_payload(payload)
        level = ss_privacy_level(mech)
        checks["ldp"] = abs(level - float(epsilon)) <= 1e-9
        checks["eps_star"] = (
            payload["eps_star"] is not None
            and abs(level - payload["eps_star"]) <= 1e-9
        )
        induced = ss_induced_distribution(dist, mech)
        predicted = payload.get("predicted") or {}
        checks["predicted_delta"] = (
            abs(float(delta(induced)) - predicted.get("delta", math.nan)) <= 1e-9
        )
        checks["predicted_delta_prime"] = (
            abs(float(delta_prime(induced)) - predicted.get("delta_prime", math.nan))
            <= 1e-9
        )
    else:
        mech = mechanism_from_payload(payload)
        if epsilon is not None:
            checks["ldp"] = bool(verify_ldp(mech, float(epsilon)))
        level = privacy_level(mech)
        recorded = payload.get("eps_star")
        if recorded is None:
            checks["eps_star"] = not math.isfinite(level)
        else:
            checks["eps_star"] = abs(level - recorded) <= 1e-9
        induced = induced_distribution(dist, mech)
        predicted = payload.get("predicted") or {}
        checks["predicted_delta"] = (
            abs(float(delta(induced)) - predicted.get("delta", math.nan)) <= 1e-9
        )
        checks["predicted_delta_prime"] = (
            abs(float(delta_prime(induced)) - predicted.get("delta_prime", math.nan))
            <= 1e-9
        )
    if epsilon is not None and payload.get("min_achievable_error") is not None:
        recomputed = min_achievable_error(dist, float(epsilon))
        checks["min_achievable_error"] = (
            abs(recomputed - payload["min_achievable_error"]) <= 1e-9
        )

    if report_path is not None:
        try:
            with open(report_path, encoding="utf-8") as fh:
                report = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"evaluate report not found: {report_path}") from None
        except json.JSONDecodeError as err:
            raise DataError(f"evaluate report is not valid JSON: {err}") from None
        resummed = _summarize(report["trials"])
        ok = True
        for metric in METRICS:
            for key in ("mean", "ci_low", "ci_high"):
                a = resummed[metric][key]
                b = report["summary"][metric][key]
                if (a is None) != (b is None):
                    ok = False
                elif a is not None and abs(a - b) > 1e-12:
                    ok = False
        checks["summary"] = ok

    return {
        "schema_version": SCHEMA_VERSION,
        "ok": all(checks.values()),
        "checks": checks,
    }
