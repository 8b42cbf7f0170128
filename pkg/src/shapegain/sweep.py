"""Reach sweeps: net rate vs distance for learned and uniform QAM schemes.

Every grid point (scheme, n_spans) is independent: the learned scheme
retrains at the grid point's effective SNR with a seed derived from the
base seed and the span count, the QAM scheme picks the best net rate over
a list of modulation orders. Rows are assembled in (scheme, n_spans)
order whatever the execution order, so results are reproducible byte for
byte, serial or threaded.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channel import LinkConfig, effective_snr, optimal_launch_power
from .constellation import Constellation, moments, uniform_qam
from .demapper import GmiReport, per_bit_gmi_mc
from .errors import ParameterError, ShapegainError
from .rate_adapt import best_plan
from .training import SnrTarget, TrainConfig, train, train_config_from_dict

_MASK64 = (1 << 64) - 1

ENV_THREADS = "SHAPEGAIN_THREADS"


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    n_spans: int
    distance_km: float
    launch_power: float
    snr_eff_db: float
    n_d: int
    data_gmi: float
    net_rate: float
    feasible: bool


@dataclass(frozen=True)
class SweepSettings:
    span_grid: tuple
    power_mode: str = "optimal"
    launch_power: Optional[float] = None
    schemes: tuple = ("ae", "qam")
    qam_m_list: tuple = ()

    def __post_init__(self):
        if not self.span_grid:
            raise ParameterError("span_grid must be nonempty")
        grid = list(self.span_grid)
        if any(int(n) < 1 for n in grid):
            raise ParameterError("span_grid entries must be >= 1")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParameterError("span_grid must be strictly increasing")
        if self.power_mode not in ("fixed", "optimal"):
            raise ParameterError(f"unknown power_mode {self.power_mode!r}")
        if self.power_mode == "fixed" and (
                self.launch_power is None or not self.launch_power > 0):
            raise ParameterError("fixed power_mode needs a positive launch_power")
        if not self.schemes or not set(self.schemes) <= {"ae", "qam"}:
            raise ParameterError(
                f"schemes must be a nonempty subset of ae/qam, got {self.schemes}")
        if "qam" in self.schemes and not self.qam_m_list:
            raise ParameterError("qam scheme requires a nonempty qam_m_list")


@dataclass(frozen=True)
class EvalSettings:
    n_samples: int = 200000
    seed: int = 0
    epsilon_mom: float = 0.01

    def __post_init__(self):
        if self.n_samples < 1:
            raise ParameterError("n_samples must be >= 1")
        if not self.epsilon_mom > 0:
            raise ParameterError("epsilon_mom must be positive")


@dataclass(frozen=True)
class OutputSettings:
    results_csv: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    link: LinkConfig
    train: TrainConfig
    sweep: Optional[SweepSettings] = None
    eval: EvalSettings = EvalSettings()
    output: OutputSettings = OutputSettings()


def _strip_notes(doc):
    """Drop documentation keys (leading underscore) from parsed JSON."""
    if isinstance(doc, dict):
        return {k: _strip_notes(v) for k, v in doc.items() if not k.startswith("_")}
    if isinstance(doc, list):
        return [_strip_notes(v) for v in doc]
    return doc


def load_run_config(path) -> RunConfig:
    """Parse a JSON run-configuration file (link/train/sweep/eval sections)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: not valid JSON: {exc}") from exc
    doc = _strip_notes(doc)
    if "link" not in doc or "train" not in doc:
        raise ParameterError(f"{path}: config needs 'link' and 'train' sections")

    link_doc = dict(doc["link"])
    link_doc.setdefault("n_spans", 1)  # placeholder, the grid overrides it
    try:
        link = LinkConfig(**link_doc)
    except TypeError as exc:
        raise ParameterError(f"bad link config: {exc}") from exc

    train_doc = dict(doc["train"])
    # sweeps retarget every grid point, so a standalone target is optional here
    train_doc.setdefault("target", {"snr_db": 10.0})
    train_cfg = train_config_from_dict(train_doc)

    sweep_cfg = None
    if "sweep" in doc:
        sw = dict(doc["sweep"])
        sw["span_grid"] = tuple(int(n) for n in sw.get("span_grid", ()))
        sw["schemes"] = tuple(sw.get("schemes", ("ae", "qam")))
        if "qam_m_list" in sw:
            sw["qam_m_list"] = tuple(int(m) for m in sw["qam_m_list"])
        elif "qam" in sw["schemes"]:
            fallback = [train_cfg.m] + ([train_cfg.m - 1] if train_cfg.m > 1 else [])
            sw["qam_m_list"] = tuple(fallback)
        try:
            sweep_cfg = SweepSettings(**sw)
        except TypeError as exc:
            raise ParameterError(f"bad sweep config: {exc}") from exc

    try:
        eval_cfg = EvalSettings(**doc.get("eval", {}))
        out_cfg = OutputSettings(**doc.get("output", {}))
    except TypeError as exc:
        raise ParameterError(f"bad eval/output config: {exc}") from exc
    return RunConfig(link=link, train=train_cfg, sweep=sweep_cfg,
                     eval=eval_cfg, output=out_cfg)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, n_spans: int) -> int:
    """Per-grid-point training seed: base xor a bit-mixed span count."""
    return (base_seed ^ _splitmix64(n_spans)) & _MASK64


def _resolve_power(link: LinkConfig, c: Constellation, sweep: SweepSettings):
    mom = moments(c)
    if sweep.power_mode == "optimal":
        return optimal_launch_power(link, mom)
    power = float(sweep.launch_power)
    return power, effective_snr(link, power, mom)


def _eval_rng(config: RunConfig, n_spans: int, scheme: str, m: int):
    code = 0 if scheme == "ae" else 1
    return np.random.default_rng([config.eval.seed, n_spans, code, m])


def evaluate_grid_point(config: RunConfig, scheme: str, n_spans: int):
    """One sweep cell: returns (SweepRow, GmiReport, Constellation).

    "qam" evaluates every order in qam_m_list and keeps the best net rate
    (ties to the earlier list entry). "ae" resolves the grid point's SNR
    with Gray-QAM moments as a proxy, trains at that SNR with a derived
    seed, then re-resolves power and SNR with the trained constellation's
    own moments before evaluation.
    """
    if config.sweep is None:
        raise ParameterError("config has no sweep section")
    link = replace(config.link, n_spans=int(n_spans))
    sw = config.sweep

    candidates = []
    if scheme == "qam":
        for m in sw.qam_m_list:
            c = uniform_qam(int(m))
            power, ch = _resolve_power(link, c, sw)
            report = per_bit_gmi_mc(c, ch.noise_variance, config.eval.n_samples,
                                    _eval_rng(config, n_spans, scheme, int(m)))
            candidates.append((c, power, ch, report))
    elif scheme == "ae":
        proxy = uniform_qam(config.train.m)
        _, ch0 = _resolve_power(link, proxy, sw)
        cfg = replace(config.train,
                      seed=derive_seed(config.train.seed, n_spans),
                      target=SnrTarget(ch0.snr_db))
        c, _ = train(cfg)
        power, ch = _resolve_power(link, c, sw)
        report = per_bit_gmi_mc(c, ch.noise_variance, config.eval.n_samples,
                                _eval_rng(config, n_spans, scheme, config.train.m))
        candidates.append((c, power, ch, report))
    else:
        raise ParameterError(f"unknown scheme {scheme!r}")

    best = None
    for c, power, ch, report in candidates:
        plan = best_plan(report, link.fec_rate)
        if best is None or plan.net_rate > best[4].net_rate:
            best = (c, power, ch, report, plan)
    c, power, ch, report, plan = best
    row = SweepRow(
        scheme=scheme,
        n_spans=int(n_spans),
        distance_km=link.n_spans * link.span_length_km,
        launch_power=power,
        snr_eff_db=ch.snr_db,
        n_d=plan.n_d,
        data_gmi=plan.data_gmi,
        net_rate=plan.net_rate,
        feasible=plan.feasible,
    )
    return row, report, c


def _thread_count() -> int:
    raw = os.environ.get(ENV_THREADS)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"{ENV_THREADS} must be a positive integer, got {raw!r}")
    if n < 1:
        raise ParameterError(f"{ENV_THREADS} must be a positive integer, got {raw!r}")
    return n


def run_sweep(config: RunConfig, keep_going: bool = False, error_sink=None,
              detail_sink=None) -> list:
    """Evaluate the whole grid; rows come back sorted by (scheme, n_spans).

    A failing grid point raises an error naming the point, unless
    keep_going is set, in which case the point is skipped and reported to
    error_sink(scheme, n_spans, exception). detail_sink, if given,
    receives (scheme, n_spans, row, report, constellation) per cell.
    Parallelism is capped by the SHAPEGAIN_THREADS environment variable
    (absent means serial); results do not depend on the thread count.
    """
    if config.sweep is None:
        raise ParameterError("config has no sweep section")
    tasks = [(scheme, n) for scheme in sorted(set(config.sweep.schemes))
             for n in config.sweep.span_grid]
    outcomes = {}

    def _run_one(task):
        scheme, n_spans = task
        return evaluate_grid_point(config, scheme, n_spans)

    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {task: pool.submit(_run_one, task) for task in tasks}
            for task, fut in futures.items():
                outcomes[task] = fut
        results = {task: _outcome(fut) for task, fut in outcomes.items()}
    else:
        results = {}
        for task in tasks:
            try:
                results[task] = ("ok", _run_one(task))
            except Exception as exc:  # noqa: BLE001 - classified below
                results[task] = ("err", exc)

    rows = []
    for task in tasks:
        status, payload = results[task]
        scheme, n_spans = task
        if status == "err":
            wrapped = _wrap_grid_error(scheme, n_spans, payload)
            if not keep_going:
                raise wrapped from payload
            if error_sink is not None:
                error_sink(scheme, n_spans, wrapped)
            continue
        row, report, c = payload
        rows.append(row)
        if detail_sink is not None:
            detail_sink(scheme, n_spans, row, report, c)
    rows.sort(key=lambda r: (r.scheme, r.n_spans))
    return rows


def _outcome(future):
    exc = future.exception()
    if exc is not None:
        return ("err", exc)
    return ("ok", future.result())


def _wrap_grid_error(scheme: str, n_spans: int, exc: Exception):
    msg = f"grid point (scheme={scheme}, n_spans={n_spans}): {exc}"
    if isinstance(exc, ShapegainError):
        return type(exc)(msg)
    return ShapegainError(msg)


def rows_to_csv(rows) -> str:
    """Fixed-order CSV, floats at 6 significant digits, booleans lowercase."""
    lines = ["scheme,n_spans,distance_km,launch_power,snr_eff_db,"
             "n_d,data_gmi,net_rate,feasible"]
    for r in rows:
        lines.append(
            f"{r.scheme},{r.n_spans},{r.distance_km:.6g},{r.launch_power:.6g},"
            f"{r.snr_eff_db:.6g},{r.n_d},{r.data_gmi:.6g},{r.net_rate:.6g},"
            f"{'true' if r.feasible else 'false'}")
    return "\n".join(lines) + "\n"


def max_reach(rows, target_net_rate: float, scheme: str) -> Optional[float]:
    """Largest feasible distance whose net rate meets the target, else None."""
    good = [r.distance_km for r in rows
            if r.scheme == scheme and r.feasible and r.net_rate >= target_net_rate]
    return max(good) if good else None
