"""Deterministic Monte Carlo runners, bound sweeps and CSV/SVG output.

Every trial owns a stream derived from ``(master seed, tag, trial index)``, so
results are identical for any number of worker processes.  Records are
gathered in trial order before anything is aggregated.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Iterable, Sequence

import numpy as np

from . import bounds as B
from .constructions import (ParameterRegimeError, build_large_tau, build_small_tau,
                            delta_large_tau, lightest_atoms, unseen_count,
                            witness_large_tau, witness_small_tau)
from .core import GENERATOR_ID, STRICT, RngStream, empirical_margin_loss, \
    exact_out_of_sample_error, sample_from
from .stats import EstimateCI, TrialRecord, estimate_from_counts

GAP_KINDS = ("small_tau", "large_tau")
BASE_COLUMNS = ("trial", "seed", "sample_margin_loss", "out_of_sample_error", "gap",
                "witness_found")


def _call(fn, kw, i):
    return fn(i, **kw)


def map_trials(fn: Callable[..., TrialRecord], trials: int, jobs: int = 1, **kw) -> list:
    """``[fn(i, **kw) for i in range(trials)]``, optionally across processes."""
    if trials < 0:
        raise ValueError("trials must be non-negative")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if jobs == 1 or trials <= 1:
        return [fn(i, **kw) for i in range(trials)]
    chunk = max(1, trials // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        out = list(pool.map(partial(_call, fn, kw), range(trials), chunksize=chunk))
    return sorted(out, key=lambda r: r.trial)


# ----------------------------------------------------------------------------
# gap experiments
# ----------------------------------------------------------------------------

def _failed(i: int, stream_id: int, reason: str) -> TrialRecord:
    nan = float("nan")
    return TrialRecord(i, stream_id, nan, nan, False, {"regime_error": 1.0})


def _small_tau_trial(i: int, seed: int, R: float, theta: float, m: int,
                     epsilon: float = 0.001, C: float = 4.0) -> TrialRecord:
    rng = RngStream.derive(seed, "gap/small_tau", i)
    try:
        inst = build_small_tau(R, theta, m, epsilon, C)
    except ParameterRegimeError as exc:
        return _failed(i, rng.stream_id, str(exc))
    S = sample_from(inst.D, m, rng.spawn("sample"))
    unseen = unseen_count(inst.u, S)
    aux = {"unseen": float(unseen), "t": float(inst.t), "u": float(inst.u),
           "n_flip": float(inst.n_flip)}
    w = witness_small_tau(inst, S)
    if w is None:
        nan = float("nan")
        return TrialRecord(i, rng.stream_id, nan, nan, False, aux)
    return TrialRecord(i, rng.stream_id, empirical_margin_loss(S, w, theta, STRICT),
                       exact_out_of_sample_error(inst.D, w), True, aux)


def _large_tau_trial(i: int, seed: int, R: float, theta: float, m: int, tau: float,
                     c_k: float = 0.25) -> TrialRecord:
    rng = RngStream.derive(seed, "gap/large_tau", i)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            inst = build_large_tau(R, theta, tau, m, c_k)
    except ParameterRegimeError as exc:
        return _failed(i, rng.stream_id, str(exc))
    S = sample_from(inst.D, m, rng.spawn("sample"))
    _, count = lightest_atoms(inst, S)
    w = witness_large_tau(inst, S)
    aux = {"t_star_count": float(count), "count_loss": count / m, "k": float(inst.k),
           "u": float(inst.u)}
    return TrialRecord(i, rng.stream_id, empirical_margin_loss(S, w, theta, STRICT),
                       exact_out_of_sample_error(inst.D, w), True, aux)


@dataclass(frozen=True)
class GapSummary:
    kind: str
    n: int
    gap_floor: float
    success: EstimateCI
    unseen_at_least_t: EstimateCI | None = None
    mean_gap: float = float("nan")


def gap_floor(kind: str, params: dict) -> float:
    if kind == "small_tau":
        inst = build_small_tau(params["R"], params["theta"], params["m"],
                               params.get("epsilon", 0.001), params.get("C", 4.0))
        return inst.n_flip / inst.u
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        inst = build_large_tau(params["R"], params["theta"], params["tau"], params["m"],
                               params.get("c_k", 0.25))
        return inst.k * delta_large_tau(inst, params["m"]) / inst.u


def summarize_gap(kind: str, records: Sequence[TrialRecord], floor: float) -> GapSummary:
    """Recomputes everything from the raw records."""
    # relative slack so an exact floor like ceil(t/16)/u counts as reached
    ok = [r.witness_found and r.gap >= floor * (1 - 1e-12) for r in records]
    unseen = None
    if kind == "small_tau":
        hits = sum(1 for r in records if r.aux.get("unseen", -1) >= r.aux.get("t", math.inf))
        unseen = estimate_from_counts(hits, len(records))
    gaps = [r.gap for r in records if r.witness_found]
    mean_gap = math.fsum(gaps) / len(gaps) if gaps else float("nan")
    return GapSummary(kind, len(records), floor, estimate_from_counts(sum(ok), len(records)),
                      unseen, mean_gap)


def run_gap_experiment(kind: str, params: dict, trials: int, seed: int,
                       jobs: int = 1) -> tuple[list[TrialRecord], GapSummary]:
    """Sample, build the witness and record exact losses for each trial.

    ``params`` holds ``R, theta, m`` plus ``epsilon, C`` (small_tau) or
    ``tau, c_k`` (large_tau).
    """
    if kind not in GAP_KINDS:
        raise ValueError(f"kind must be one of {GAP_KINDS}")
    if kind == "small_tau":
        keys = ("R", "theta", "m", "epsilon", "C")
        fn = _small_tau_trial
    else:
        keys = ("R", "theta", "m", "tau", "c_k")
        fn = _large_tau_trial
    unknown = set(params) - set(keys)
    if unknown:
        raise ValueError(f"unexpected parameters for {kind}: {sorted(unknown)}")
    kw = {k: v for k, v in params.items() if v is not None}
    kw["m"] = int(kw["m"])
    records = map_trials(fn, trials, jobs, seed=seed, **kw)
    try:
        floor = gap_floor(kind, kw)
    except ParameterRegimeError:
        floor = float("nan")
    return records, summarize_gap(kind, records, floor)


# ----------------------------------------------------------------------------
# bound sweeps and event estimates
# ----------------------------------------------------------------------------

SWEEP_COLUMNS = ("R", "theta", "m", "L", "delta", "C", "bound", "value", "vacuous",
                 "main_below_bm", "L_below_inv_log_m")


def run_bound_sweep(R: float, thetas: Iterable[float], ms: Iterable[float],
                    Ls: Iterable[float], deltas: Iterable[float], C: float = 1.0,
                    tau: float | None = None) -> list[dict]:
    """One row per grid point per bound, with the main-vs-BM crossover flags."""
    rows = []
    for theta in thetas:
        for m in ms:
            for delta in deltas:
                for L in Ls:
                    inp = B.BoundInputs(R, theta, m, delta, L, C)
                    reports = B.compare_all(inp, tau)
                    by_name = {r.name: r.value for r in reports}
                    flag = by_name["bound_main"] < by_name["bound_bm"]
                    for rep in reports:
                        rows.append({"R": R, "theta": theta, "m": m, "L": L, "delta": delta,
                                     "C": C, "bound": rep.name, "value": rep.value,
                                     "vacuous": rep.vacuous, "main_below_bm": flag,
                                     "L_below_inv_log_m": L < 1.0 / math.log(m)})
    return rows


def crossover_mismatches(rows: Sequence[dict]) -> list[dict]:
    """Grid points where ``bound_main < bound_bm`` disagrees with ``L < 1/ln m``."""
    seen, out = set(), []
    for r in rows:
        key = (r["theta"], r["m"], r["delta"], r["L"])
        if key in seen:
            continue
        seen.add(key)
        if r["main_below_bm"] != r["L_below_inv_log_m"]:
            out.append(r)
    return out


def estimate_event(sampler: Callable[[RngStream], bool], trials: int, seed: int,
                   tag: str = "event") -> EstimateCI:
    """Wilson estimate of ``Pr[sampler(rng)]`` over independent per-trial streams."""
    if trials < 1:
        raise ValueError("need at least one trial")
    hits = sum(bool(sampler(RngStream.derive(seed, tag, i))) for i in range(trials))
    return estimate_from_counts(hits, trials)


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------

def fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _record_rows(records: Sequence[TrialRecord]) -> tuple[list[str], list[list[str]]]:
    aux_keys = sorted({k for r in records for k in r.aux})
    header = list(BASE_COLUMNS) + [f"aux_{k}" for k in aux_keys]
    rows = []
    for r in records:
        base = [r.trial, r.seed, r.sample_margin_loss, r.out_of_sample_error, r.gap,
                r.witness_found]
        rows.append([fmt_cell(v) for v in base] +
                    [fmt_cell(r.aux[k]) if k in r.aux else "" for k in aux_keys])
    return header, rows


def _open_write(path):
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc


def dumps_csv(items: Sequence, columns: Sequence[str] | None = None) -> str:
    items = list(items)
    if items and isinstance(items[0], TrialRecord) or (not items and columns is None):
        header, rows = _record_rows(items)
    else:
        header = list(columns) if columns else list(dict.fromkeys(k for r in items for k in r))
        rows = [[fmt_cell(r[c]) if c in r else "" for c in header] for r in items]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_csv(items: Sequence, path, columns: Sequence[str] | None = None,
             meta: dict | None = None) -> str:
    """Write records or table rows; returns the text.  ``meta`` goes to ``path.meta``."""
    text = dumps_csv(items, columns)
    with _open_write(path) as fh:
        fh.write(text)
    if meta is not None:
        write_meta(os.fspath(path) + ".meta", meta)
    return text


def write_meta(path, meta: dict) -> None:
    info = {"generator": GENERATOR_ID, **meta}
    with _open_write(path) as fh:
        for k in sorted(info):
            fh.write(f"{k}={info[k]}\n")


def parse_csv(source) -> list[TrialRecord]:
    """Inverse of :func:`emit_csv` for TrialRecord lists (path or text)."""
    if isinstance(source, str) and "\n" in source:
        text = source
    else:
        try:
            with open(source, encoding="utf-8", newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise OSError(f"{source}: {exc.strerror}") from exc
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        aux = {k[4:]: float(v) for k, v in row.items() if k.startswith("aux_") and v != ""}
        out.append(TrialRecord(int(row["trial"]), int(row["seed"]),
                               float(row["sample_margin_loss"]),
                               float(row["out_of_sample_error"]),
                               row["witness_found"] == "1", aux, float(row["gap"])))
    return out


def read_table(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------
# figures
# ----------------------------------------------------------------------------

def emit_svg_lines(series: dict, path, title: str = "", xlabel: str = "x",
                   ylabel: str = "y", logy: bool = False) -> None:
    """Line chart of ``{label: (xs, ys)}``; byte-stable SVG (or PNG by suffix)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "marginlab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for label, (xs, ys) in series.items():
            ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2, label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if series:
            ax.legend(fontsize="small")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        meta = {"Date": None} if str(path).endswith(".svg") else {}
        try:
            fig.savefig(path, metadata=meta)
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror}") from exc
        finally:
            plt.close(fig)


def sweep_series(rows: Sequence[dict], names: Sequence[str] = ("bound_main", "bound_bm"),
                 x: str = "L") -> dict:
    series = {}
    for name in names:
        pts = sorted((float(r[x]), float(r["value"])) for r in rows if r["bound"] == name)
        if pts:
            series[name] = ([p[0] for p in pts], [p[1] for p in pts])
    return series
