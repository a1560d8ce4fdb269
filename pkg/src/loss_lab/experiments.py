"""Experiment sweeps: configuration, seeded parallel trials, CSV and JSON output.

Seeds split as master -> experiment -> trial -> round. The experiment key is
the kind's position in ``KINDS``; a trial's seed sequence is keyed by
``(experiment, sweep index, trial)`` and its integer seed (written to the
CSV) seeds the per-round spawn inside the learners.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from . import csc, families, lemmas
from .classes import RlMeanClass, closed_product_class, eluder_dim_bruteforce
from .dist import mean_mass
from .hybrid import run_dist_fqi_hybrid, run_fqi_hybrid
from .losses import LossKind
from .mdp import Policy, TabularMdp, coverage_coefficient, exact_q_star, make_low_rank_mdp, policy_value, policy_variance, visitation_dist
from .offline import generate_offline, run_pessimistic, run_pessimistic_dist
from .online import OnlineConfig, run_optimistic, run_optimistic_dist
from .rates import fit_rate

KINDS = ("csc-rates", "csc-lower-bounds", "online", "offline", "hybrid", "verify-lemmas", "eluder")
COLUMNS = (
    "experiment", "loss", "sweep_param", "sweep_value", "trial", "seed",
    "suboptimality", "regret_cumulative", "vstar", "sigma_sq_star", "coverage", "runtime_ms",
)

FAMILIES = {
    "csc-rates": ("small_cost", "zero_variance", "sq_counterexample"),
    "csc-lower-bounds": ("sq_counterexample", "bce_counterexample"),
    "online": ("small_cost", "zero_variance", "random"),
    "offline": ("random", "small_cost", "zero_variance", "mdp_file"),
    "hybrid": ("small_cost", "zero_variance"),
    "verify-lemmas": ("suites",),
    "eluder": ("low_rank",),
}


class ConfigError(ValueError):
    """Invalid configuration. ``errors`` lists ``{"loc": "a.b", "msg": ...}``."""

    def __init__(self, errors: list[dict]):
        self.errors = errors
        super().__init__("; ".join(f"{e['loc']}: {e['msg']}" for e in errors))


class InstanceSpec(BaseModel):
    family: str
    params: dict = Field(default_factory=dict)
    path: str | None = None


class Assertion(BaseModel):
    """A check on the CSV rows.

    ``slope_between`` / ``slope_at_most``: fitted rate of ``loss``.
    ``frequency_at_least``: at every sweep value, the share of trials with
    suboptimality at least ``scale * value ** power`` is at least ``bound``.
    ``mean_ratio_at_most``: at every sweep value, mean suboptimality of
    ``loss`` over that of ``other`` is at most ``bound``.
    ``zero_violations``: every row has ``regret_cumulative == 0`` (lemma
    suites store violation counts there).
    ``eluder_trend``: mean estimate at each ``d`` is at most
    ``bound * d * ln(d / eps)``.
    """

    kind: Literal["slope_between", "slope_at_most", "frequency_at_least", "mean_ratio_at_most", "zero_violations", "eluder_trend"]
    loss: str | None = None
    other: str | None = None
    lo: float | None = None
    hi: float | None = None
    bound: float | None = None
    scale: float = 1.0
    power: float = 0.0
    report_only: bool = False


class ExperimentConfig(BaseModel):
    experiment: Literal["csc-rates", "csc-lower-bounds", "online", "offline", "hybrid", "verify-lemmas", "eluder"]
    instance: InstanceSpec
    losses: list[str] = Field(default_factory=lambda: ["sq", "bce"])
    sweep_param: str = "n"
    sweep: list[float]
    trials: int = Field(default=1, ge=1)
    delta: float = Field(default=0.05, gt=0, lt=1)
    seed: int = 0
    output: str = "results"
    threads: int = Field(default=1, ge=1)
    assertions: list[Assertion] = Field(default_factory=list)

    @field_validator("sweep")
    @classmethod
    def _ascending(cls, v):
        if not v:
            raise ValueError("sweep must not be empty")
        if any(x <= 0 for x in v):
            raise ValueError("sweep values must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep values must be strictly ascending")
        return v

    @model_validator(mode="after")
    def _family(self):
        if self.instance.family not in FAMILIES[self.experiment]:
            raise ValueError(f"family {self.instance.family!r} is not available for {self.experiment}; choose from {FAMILIES[self.experiment]}")
        if self.experiment not in ("verify-lemmas",):
            for name in self.losses:
                LossKind.parse(name)
        if self.instance.path is not None and not Path(self.instance.path).exists():
            raise ValueError(f"instance file {self.instance.path} does not exist")
        return self


def load_config(source, **overrides) -> ExperimentConfig:
    """Parse a config from a path, JSON text or dict; ``overrides`` replace
    top-level fields when not ``None``.
    """
    if isinstance(source, dict):
        doc = dict(source)
    else:
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError([{"loc": "<root>", "msg": f"invalid JSON: {e}"}]) from None
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError([{"loc": ".".join(str(p) for p in err["loc"]) or "<root>", "msg": err["msg"]} for err in e.errors()]) from None


# -- seeds ----------------------------------------------------------------

def trial_seed(master: int, kind: str, sweep_index: int, trial: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(KINDS.index(kind), sweep_index, trial))
    return int(ss.generate_state(1)[0])


def experiment_seed(master: int, kind: str) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(KINDS.index(kind),))
    return int(ss.generate_state(1)[0])


# -- per-kind trials ------------------------------------------------------------

def _row(cfg, loss, value, trial, seed, sub, cum=None, vstar=None, var=None, cov=None) -> dict:
    return {
        "experiment": cfg.experiment, "loss": loss, "sweep_param": cfg.sweep_param,
        "sweep_value": value, "trial": trial, "seed": seed, "suboptimality": sub,
        "regret_cumulative": cum, "vstar": vstar, "sigma_sq_star": var, "coverage": cov, "runtime_ms": None,
    }


def _csc_instance(family: str, n: int, params: dict):
    """``(instance, mean class, dist class or None)``."""
    if family == "small_cost":
        inst, mc = families.csc_small_cost_family(n)
        return inst, mc, None
    if family == "zero_variance":
        inst, dc = families.csc_zero_variance_family(n, **params)
        return inst, families.csc_mean_class(dc), dc
    if family == "sq_counterexample":
        inst, mc = csc.build_sq_counterexample(n)
        return inst, mc, None
    if family == "bce_counterexample":
        inst, mc = csc.build_bce_counterexample(n)
        return inst, mc, None
    raise ValueError(f"unknown family {family}")


def _csc_trial(cfg: ExperimentConfig, value, trial: int, seed: int) -> list[dict]:
    n = int(value)
    inst, mc, dc = _csc_instance(cfg.instance.family, n, cfg.instance.params)
    data = csc.sample_dataset(inst, n, seed)
    vstar, var = csc.optimal_value(inst)
    rows = []
    for name in cfg.losses:
        loss = LossKind.parse(name)
        if loss is LossKind.Mle:
            if dc is None:
                raise ValueError(f"family {cfg.instance.family} has no distribution class for mle")
            table = dc.means[csc.mle_fit(dc, data)]
        else:
            table = mc.values[csc.erm(mc, data, loss)]
        sub = csc.regret(inst, csc.greedy_policy(table))
        rows.append(_row(cfg, loss.value, value, trial, seed, sub, None, vstar, var))
    return rows


def _rl_instance(cfg: ExperimentConfig, value, distributional: bool):
    fam, p = cfg.instance.family, dict(cfg.instance.params)
    K = int(value)
    if cfg.experiment == "online":
        if fam == "small_cost":
            return families.online_small_cost_family(K, cfg.delta, **p)
        if fam == "zero_variance":
            mdp, dc = families.online_zero_variance_family(K, cfg.delta, **p)
            return mdp, dc if distributional else RlMeanClass(dc.means)
        return families.random_rl_family(seed=experiment_seed(cfg.seed, cfg.experiment), distributional=distributional, **p)
    if cfg.experiment == "hybrid" or fam in ("small_cost", "zero_variance"):
        if fam == "small_cost":
            return families.hybrid_small_cost_family(K)
        return families.hybrid_zero_variance_family(K, distributional, **p)
    if fam == "mdp_file":
        mdp = TabularMdp.from_json(Path(cfg.instance.path).read_text())
        last = mdp.cost_mass[-1] if distributional else mdp.cost_mean[-1]
        rng = np.random.default_rng(experiment_seed(cfg.seed, cfg.experiment))
        other = (0.7 * last + 0.3 * rng.dirichlet(np.ones(mdp.M + 1), size=last.shape[:2])) if distributional else np.clip(
            last + 0.1 * rng.uniform(-1, 1, size=last.shape), 0.0, 1.0
        )
        return mdp, closed_product_class(mdp, np.stack([last, other]), distributional=distributional)
    return families.random_rl_family(seed=experiment_seed(cfg.seed, cfg.experiment), distributional=distributional, closed=True, **p)


def _optimal_stats(mdp: TabularMdp):
    _, pistar, vstar = exact_q_star(mdp)
    return pistar, vstar, policy_variance(mdp, pistar)


def _online_trial(cfg, value, trial, seed) -> list[dict]:
    rows = []
    K = int(value)
    for name in cfg.losses:
        loss = LossKind.parse(name)
        mdp, cls = _rl_instance(cfg, value, loss.distributional)
        _, vstar, var = _optimal_stats(mdp)
        oc = OnlineConfig(K=K, loss=loss, delta=cfg.delta, seed=seed, check_completeness=False)
        rec = (run_optimistic_dist if loss.distributional else run_optimistic)(mdp, cls, oc)
        rows.append(_row(cfg, loss.value, value, trial, seed, rec.average_regret, float(rec.cumulative_regret[-1]), vstar, var))
    return rows


def _offline_trial(cfg, value, trial, seed) -> list[dict]:
    rows = []
    n = int(value)
    for name in cfg.losses:
        loss = LossKind.parse(name)
        mdp, cls = _rl_instance(cfg, value, loss.distributional)
        pistar, vstar, var = _optimal_stats(mdp)
        behavior = Policy.uniform(mdp.H, mdp.X, mdp.A)
        nu = visitation_dist(mdp, behavior)
        data = generate_offline(mdp, nu, n, seed)
        if loss.distributional:
            pi, _, _ = run_pessimistic_dist(mdp, cls, data, delta=cfg.delta)
        else:
            pi, _, _ = run_pessimistic(mdp, cls, data, loss, delta=cfg.delta)
        sub = policy_value(mdp, pi) - vstar
        rows.append(_row(cfg, loss.value, value, trial, seed, sub, None, vstar, var, coverage_coefficient(mdp, pistar, nu)))
    return rows


def _hybrid_trial(cfg, value, trial, seed) -> list[dict]:
    rows = []
    K = int(value)
    ratio = float(cfg.instance.params.get("offline_per_round", 1.0))
    params = {k: v for k, v in cfg.instance.params.items() if k != "offline_per_round"}
    for name in cfg.losses:
        loss = LossKind.parse(name)
        sub_cfg = cfg.model_copy(update={"instance": InstanceSpec(family=cfg.instance.family, params=params)})
        mdp, cls = _rl_instance(sub_cfg, value, loss.distributional)
        _, vstar, var = _optimal_stats(mdp)
        off = generate_offline(mdp, Policy.uniform(mdp.H, mdp.X, mdp.A), max(1, int(round(ratio * K))), seed)
        oc = OnlineConfig(K=K, loss=loss, delta=cfg.delta, seed=seed, check_completeness=False)
        rec = (run_dist_fqi_hybrid if loss.distributional else run_fqi_hybrid)(mdp, cls, oc, off)
        rows.append(_row(cfg, loss.value, value, trial, seed, rec.average_regret, float(rec.cumulative_regret[-1]), vstar, var))
    return rows


def _lemma_trial(cfg, value, trial, seed) -> list[dict]:
    p = cfg.instance.params
    pairs = int(p.get("pairs", value))
    draws = int(p.get("draws", min(int(value), 10_000)))
    only = p.get("suites")
    rows = []
    for r in lemmas.verify_all(pairs=pairs, draws=draws, seed=seed, only=only):
        row = _row(cfg, r.name, value, trial, seed, r.max_ratio, r.violations)
        row["vstar"] = r.minimal_constant
        rows.append(row)
    return rows


def eluder_estimate(d: int, seed, eps: float = 0.1, X: int = 3, A: int = 2, n_psi: int = 6, n_mu: int = 8) -> int:
    """Eluder dimension of a tiny low-rank instance: functions linear in the
    step-2 features, distributions the step-2 occupancies of random policies.
    """
    rng = np.random.default_rng(seed)
    mdp, phi, _, _ = make_low_rank_mdp(d, X, A, 2, rng)
    w = rng.standard_normal((n_psi, d))
    w /= np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-12)
    psi = (phi[1].reshape(X * A, d) @ w.T).T
    mus = []
    for _ in range(n_mu):
        pi = Policy(rng.dirichlet(np.ones(A), size=(2, X)))
        mus.append(visitation_dist(mdp, pi)[1].ravel())
    return eluder_dim_bruteforce(psi, np.array(mus), eps)


def _eluder_trial(cfg, value, trial, seed) -> list[dict]:
    eps = float(cfg.instance.params.get("eps", 0.1))
    est = eluder_estimate(int(value), seed, eps)
    return [_row(cfg, "none", value, trial, seed, float(est))]


_TRIALS = {
    "csc-rates": _csc_trial,
    "csc-lower-bounds": _csc_trial,
    "online": _online_trial,
    "offline": _offline_trial,
    "hybrid": _hybrid_trial,
    "verify-lemmas": _lemma_trial,
    "eluder": _eluder_trial,
}


def _task(args):
    doc, idx, value, trial = args
    cfg = ExperimentConfig.model_validate(doc)
    seed = trial_seed(cfg.seed, cfg.experiment, idx, trial)
    try:
        return _TRIALS[cfg.experiment](cfg, _clean(value), trial, seed), None
    except Exception as e:  # reported as an error record
        return [], {"sweep_value": value, "trial": trial, "seed": seed, "error": f"{type(e).__name__}: {e}"}


def _clean(v):
    return int(v) if float(v).is_integer() else float(v)


# -- CSV ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in r.items():
            if k in ("experiment", "loss", "sweep_param"):
                row[k] = v
            elif v == "":
                row[k] = None
            else:
                row[k] = float(v)
        out.append(row)
    return out


# -- summary ---------------------------------------------------------------------

def _means_by_value(rows, loss):
    by = {}
    for r in rows:
        if r["loss"] == loss:
            by.setdefault(r["sweep_value"], []).append(r["suboptimality"])
    return {v: float(np.mean(s)) for v, s in sorted(by.items())}


def _check(a: Assertion, rows: list[dict], fits: dict) -> dict:
    out = a.model_dump()
    try:
        if a.kind in ("slope_between", "slope_at_most"):
            f = fits.get(a.loss)
            if f is None:
                raise ValueError(f"no rate fit for loss {a.loss}")
            if "slope" not in f:
                raise ValueError(f["error"])
            ok = f["slope"] <= a.hi and (a.kind == "slope_at_most" or f["slope"] >= a.lo)
            out["observed"] = f["slope"]
        elif a.kind == "frequency_at_least":
            freqs = {}
            for r in rows:
                if r["loss"] != a.loss:
                    continue
                thr = a.scale * r["sweep_value"] ** a.power
                freqs.setdefault(r["sweep_value"], []).append(r["suboptimality"] >= thr * (1 - 1e-9))
            obs = {str(v): float(np.mean(x)) for v, x in sorted(freqs.items())}
            ok = bool(obs) and all(x >= a.bound for x in obs.values())
            out["observed"] = obs
        elif a.kind == "mean_ratio_at_most":
            m1, m2 = _means_by_value(rows, a.loss), _means_by_value(rows, a.other)
            obs = {str(v): (m1[v] / m2[v] if m2[v] > 0 else (0.0 if m1[v] == 0 else math.inf)) for v in m1}
            ok = bool(obs) and all(x <= a.bound for x in obs.values())
            out["observed"] = obs
        elif a.kind == "zero_violations":
            bad = {r["loss"]: r["regret_cumulative"] for r in rows if r["regret_cumulative"]}
            ok = not bad
            out["observed"] = bad
        else:  # eluder_trend
            m = _means_by_value(rows, "none")
            eps = a.scale
            obs = {str(d): (est, d * math.log(d / eps)) for d, est in m.items()}
            ok = all(est <= a.bound * ref for est, ref in obs.values())
            out["observed"] = obs
        out["passed"] = bool(ok)
    except ValueError as e:
        out["passed"] = False
        out["error"] = str(e)
    return out


def summarize(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    """Rate fits and assertion outcomes; depends only on ``cfg`` and the rows."""
    fits = {}
    if cfg.experiment not in ("verify-lemmas", "eluder"):
        for loss in dict.fromkeys(r["loss"] for r in rows):
            m = _means_by_value(rows, loss)
            if len(m) >= 3:
                try:
                    fits[loss] = fit_rate(list(m), list(m.values())).to_dict()
                except ValueError as e:
                    fits[loss] = {"error": str(e)}
    checks = [_check(a, rows, fits) for a in cfg.assertions]
    return {
        "experiment": cfg.experiment,
        "rate_fits": fits,
        "means": {loss: {str(k): v for k, v in _means_by_value(rows, loss).items()} for loss in dict.fromkeys(r["loss"] for r in rows)},
        "assertions": checks,
        "passed": all(c["passed"] for c in checks if not c["report_only"]),
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, emit_summary: bool = True) -> dict:
    """Run every (sweep value, trial), write ``<kind>.csv`` (and the summary
    JSON when asked) under ``out_dir``; return the summary.

    A failing trial stops the sweep: rows before it in CSV order are kept
    and the summary carries an error record.
    """
    doc = cfg.model_dump()
    tasks = [(doc, i, v, t) for i, v in enumerate(cfg.sweep) for t in range(cfg.trials)]
    if cfg.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.threads))))
    else:
        results = [_task(t) for t in tasks]
    rows, error = [], None
    for part, err in results:
        if err is not None:
            error = err
            break
        rows.extend(part)
    text = rows_to_csv(rows)
    summary = summarize(cfg, read_csv(text))
    summary["error"] = error
    if error is not None:
        summary["passed"] = False
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{cfg.experiment}.csv", "w", newline="") as fh:
        fh.write(text)
    if emit_summary:
        with open(out / f"{cfg.experiment}.summary.json", "w", newline="\n") as fh:
            json.dump({"config": doc, **summary}, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    summary["csv_path"] = os.fspath(out / f"{cfg.experiment}.csv")
    return summary


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)
