"""Command-line front end: ``detect``, ``synth`` and ``bench`` subcommands.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
The log level comes from ``HAVOK_DETECT_LOG`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import embedding, synth, threshold
from .detector import run_pipeline
from .series import NumericalError, PipelineConfig, TimeSeries, ValidationError

log = logging.getLogger("havok_detect")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

SCENARIOS = ("calcium", "ecg", "mud")
SWEEP_PARAMS = {
    "calcium": {"noise": "noise_rms", "rate": "rate_hz", "baseline": "baseline"},
    "ecg": {"noise": "noise_rms", "distortion": "morph_distortion"},
    "mud": {"noise": "noise_rms", "drift": "drift_amplitude", "impulsive": "impulsive_rate"},
}


# --- input -------------------------------------------------------------------

@dataclass(frozen=True)
class InputSpec:
    path: str
    format: str = "csv"
    value_column: Union[int, str] = 0
    sample_period: float = 1.0
    truth_column: Optional[Union[int, str]] = None

    def __post_init__(self):
        if self.format not in ("csv", "json-lines"):
            raise ValidationError(f"unknown input format {self.format!r}")
        if not (np.isfinite(self.sample_period) and self.sample_period > 0):
            raise ValidationError(f"sample period must be positive, got {self.sample_period}")


def _column_ref(text: Optional[str]):
    if text is None:
        return None
    return int(text) if text.lstrip("-").isdigit() else text


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _resolve(col, header: Optional[List[str]], width: int, what: str) -> int:
    if isinstance(col, int):
        if not 0 <= col < width:
            raise ValidationError(f"{what} column {col} does not exist ({width} columns)")
        return col
    if header is None or col not in header:
        raise ValidationError(f"{what} column {col!r} not found in header")
    return header.index(col)


def read_csv(spec: InputSpec) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    rows = []
    with open(spec.path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            rows.append((lineno, cells))
    if not rows:
        raise ValidationError(f"{spec.path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = rows[0][1]
        rows = rows[1:]
    if not rows:
        raise ValidationError(f"{spec.path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0][1])
    vi = _resolve(spec.value_column, header, width, "value")
    ti = None if spec.truth_column is None else _resolve(spec.truth_column, header, width, "truth")
    values, truth = [], []
    for lineno, cells in rows:
        try:
            values.append(float(cells[vi]))
            if ti is not None:
                truth.append(float(cells[ti]))
        except (IndexError, ValueError):
            raise ValidationError(f"{spec.path}: line {lineno}: malformed row {','.join(cells)!r}")
    return np.asarray(values), (np.asarray(truth) if ti is not None else None)


def read_jsonl(spec: InputSpec) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """One JSON object (or bare number) per line."""
    vcol = "value" if isinstance(spec.value_column, int) and spec.value_column == 0 else spec.value_column
    values, truth = [], []
    with open(spec.path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if isinstance(rec, (int, float)) and not isinstance(rec, bool):
                    values.append(float(rec))
                    if spec.truth_column is not None:
                        raise KeyError(spec.truth_column)
                    continue
                values.append(float(rec[vcol]))
                if spec.truth_column is not None:
                    truth.append(float(rec[spec.truth_column]))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise ValidationError(f"{spec.path}: line {lineno}: malformed record ({exc})")
    if not values:
        raise ValidationError(f"{spec.path}: no data rows")
    return np.asarray(values), (np.asarray(truth) if spec.truth_column is not None else None)


def load_input(spec: InputSpec) -> Tuple[TimeSeries, Optional[np.ndarray]]:
    if not os.path.isfile(spec.path):
        raise ValidationError(f"cannot read input file: {spec.path}")
    values, truth = read_csv(spec) if spec.format == "csv" else read_jsonl(spec)
    return TimeSeries(values, spec.sample_period), truth


def write_series_csv(path, y: TimeSeries, flags: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("value,truth\n")
        for v, f in zip(y.samples, flags):
            fh.write(f"{v:.17g},{int(f)}\n")


def write_truth_csv(path, truth: synth.GroundTruth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if truth.bits is not None:
            w.writerow(["slot", "bit", "onset_index"])
            for s, b in enumerate(truth.bits):
                w.writerow([s, b, s * truth.slot_len])
        elif truth.event_windows or not truth.event_indices:
            w.writerow(["start_index", "end_index"])
            w.writerows(truth.event_windows)
        else:
            w.writerow(["event_index"])
            w.writerows([i] for i in truth.event_indices)


# --- scenarios ------------------------------------------------------------------

def generate(scenario: str, seed: int, **params):
    """Draw one synthetic series and its ground truth."""
    if scenario == "calcium":
        return synth.gen_calcium(seed=seed, **params)
    if scenario == "ecg":
        return synth.gen_periodic_anomaly(seed=seed, **params)
    if scenario == "mud":
        return synth.gen_pulse_train(seed=seed, **params)
    raise ValidationError(f"unknown scenario {scenario!r}")


def scenario_config(scenario: str, sample_period: float, matched_filter: bool = True,
                    slot_len: int = 50, beat_period: int = 72) -> PipelineConfig:
    """Reference detector settings for each synthetic scenario."""
    if scenario == "calcium":
        return PipelineConfig(min_stimulus_interval=0.4)
    if scenario == "ecg":
        return PipelineConfig(use_hilbert=True, memory_M=80, order_r=2,
                              min_stimulus_interval=beat_period * sample_period,
                              threshold_method="detachment")
    if scenario == "mud":
        pulse = synth.default_pulse()
        # the shortest spacing between pulse trains is the gap after a pulse
        gap = (slot_len - pulse.size) * sample_period
        return PipelineConfig(memory_M=20, order_r=2, robust_median=True,
                              matched_filter=pulse if matched_filter else None,
                              min_stimulus_interval=gap)
    raise ValidationError(f"unknown scenario {scenario!r}")


def score(scenario: str, report, truth: synth.GroundTruth, beat_period: int = 72) -> Dict[str, float]:
    if scenario == "calcium":
        return {"error_ratio": synth.error_ratio(report.events, truth, report.sector_halfwidth)}
    if scenario == "mud":
        return {"bit_error_rate": synth.bit_error_rate(report.events, truth)}
    flagged, false = synth.window_hits(report.events, truth, merge=3 * beat_period)
    return {"windows_flagged": float(flagged), "false_windows": float(false),
            "pass": float(flagged >= min(2, len(truth.event_windows)) and false <= 1)}


PRIMARY_METRIC = {"calcium": "error_ratio", "mud": "bit_error_rate", "ecg": "pass"}


def run_trial(scenario: str, seed: int, params: Optional[dict] = None,
              matched_filter: bool = True) -> Dict[str, float]:
    params = dict(params or {})
    y, truth = generate(scenario, seed, **params)
    cfg = scenario_config(scenario, y.sample_period, matched_filter,
                          slot_len=params.get("slot_len", 50),
                          beat_period=params.get("beat_period", 72))
    rep = run_pipeline(y, cfg)
    return score(scenario, rep, truth, params.get("beat_period", 72))


def _trial_job(args):
    scenario, seed, params, mf = args
    return run_trial(scenario, seed, params, mf)


def snr_db(y: TimeSeries, noise_rms: float) -> float:
    if noise_rms <= 0:
        return float("inf")
    return float(10 * np.log10(np.var(y.samples) / noise_rms ** 2))


# --- subcommands ---------------------------------------------------------------

def _config_from_args(a) -> PipelineConfig:
    cfg = PipelineConfig(robust_median=a.robust, two_sided=a.two_sided, use_hilbert=a.hilbert,
                         rng_seed=a.seed, threshold_method=a.threshold,
                         min_stimulus_interval=a.min_interval)
    if not a.auto:
        if a.M is not None:
            cfg = cfg.replace(memory_M=a.M)
        if a.r is not None:
            cfg = cfg.replace(order_r=a.r)
    if a.L is not None:
        if a.L < 2 or a.L % 2:
            raise ValidationError(f"--L must be an even integer >= 2, got {a.L}")
        cfg = cfg.replace(sector_halfwidth=a.L // 2)
    if a.bins is not None:
        cfg = cfg.replace(histogram_bins=a.bins)
    if a.min_separation is not None:
        cfg = cfg.replace(min_event_separation=a.min_separation)
    if a.matched_filter is not None:
        w, _ = load_input(InputSpec(a.matched_filter, "csv"))
        cfg = cfg.replace(matched_filter=w.samples.copy())
    return cfg


def _truth_onsets(flags: np.ndarray) -> List[int]:
    on = (flags != 0).astype(np.int8)
    return np.flatnonzero(np.diff(np.concatenate([[0], on])) == 1).tolist()


def cmd_detect(a) -> int:
    spec = InputSpec(a.input, a.format, _column_ref(a.column), a.ts, _column_ref(a.truth_column))
    y, truth = load_input(spec)
    cfg = _config_from_args(a)
    rep = run_pipeline(y, cfg)
    out = rep.to_dict()
    out["input"] = {"path": spec.path, "n_samples": len(y), "sample_period": y.sample_period}
    if truth is not None:
        onsets = _truth_onsets(truth)
        gt = synth.GroundTruth(tuple(onsets))
        out["score"] = {"n_true": len(onsets), "tolerance": rep.sector_halfwidth,
                        "error_ratio": synth.error_ratio(rep.events, gt, rep.sector_halfwidth)}
    text = json.dumps(out, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
    else:
        print(text)
    if a.dump_traces:
        _dump_traces(Path(a.dump_traces), rep)
    log.info("%d events", len(rep.events))
    return EXIT_OK


def _dump_traces(folder: Path, rep) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    if rep.trace is None:
        log.warning("no decision trace (constant input); nothing to dump")
        return
    (folder / "trace.csv").write_text(rep.trace.to_csv())
    (folder / "spectrum.csv").write_text(embedding.spectrum_csv(rep.decomposition))
    h = threshold.build_histogram(rep.trace.d, rep.config.histogram_bins)
    (folder / "histogram.csv").write_text(threshold.histogram_fit_csv(h, rep.threshold))


def _synth_params(a) -> dict:
    p = {}
    if a.scenario == "calcium":
        p.update(n_samples=a.n or 14400, rate_hz=a.rate if a.rate is not None else 0.2,
                 noise_rms=a.noise if a.noise is not None else 0.1)
    elif a.scenario == "ecg":
        p.update(n_samples=a.n or 2160, n_windows=a.windows if a.windows is not None else 3,
                 noise_rms=a.noise if a.noise is not None else 0.05)
    else:
        p.update(n_slots=a.slots or 200, noise_rms=a.noise if a.noise is not None else 0.5)
        if a.drift is not None:
            p["drift_amplitude"] = a.drift
    return p


def cmd_synth(a) -> int:
    params = _synth_params(a)
    y, truth = generate(a.scenario, a.seed, **params)
    data = Path(a.out)
    truth_path = Path(a.truth) if a.truth else data.with_name(data.stem + "_truth.csv")
    write_series_csv(data, y, truth.flags(len(y)))
    write_truth_csv(truth_path, truth)
    n_events = len(truth.event_windows) if a.scenario == "ecg" else len(truth.event_indices)
    print(f"N={len(y)} events={n_events} SNR={snr_db(y, params['noise_rms']):.2f} dB "
          f"Ts={y.sample_period:.6g} data={data} truth={truth_path}")
    return EXIT_OK


def parse_sweep(text: str, scenario: str) -> Tuple[str, List[float]]:
    if "=" not in text:
        raise ValidationError(f"sweep must look like name=v1,v2,..., got {text!r}")
    name, vals = text.split("=", 1)
    name = name.strip()
    if name not in SWEEP_PARAMS[scenario]:
        raise ValidationError(f"{scenario} cannot sweep {name!r}; choose from "
                              f"{sorted(SWEEP_PARAMS[scenario])}")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"non-numeric sweep value in {text!r}")
    if not values:
        raise ValidationError("empty sweep")
    return name, values


def bench(scenario: str, sweep: Tuple[str, Sequence[float]], trials: int, jobs: int = 1,
          matched_filter: bool = True, seed0: int = 0) -> List[dict]:
    """Mean and std of the scenario metric per sweep point; rows ordered by sweep point."""
    name, values = sweep
    key = SWEEP_PARAMS[scenario][name]
    tasks = [(scenario, seed0 + s, {key: v}, matched_filter) for v in values for s in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_job, tasks))
    else:
        results = [_trial_job(t) for t in tasks]
    metric = PRIMARY_METRIC[scenario]
    rows = []
    for i, v in enumerate(values):
        m = np.array([r[metric] for r in results[i * trials:(i + 1) * trials]])
        rows.append({"param": name, "value": v, "metric": metric, "mean": float(m.mean()),
                     "std": float(m.std(ddof=1)) if m.size > 1 else 0.0, "trials": trials})
    return rows


def cmd_bench(a) -> int:
    if a.trials < 1 or a.jobs < 1:
        raise ValidationError("--trials and --jobs must be >= 1")
    sweep = parse_sweep(a.sweep, a.scenario)
    rows = bench(a.scenario, sweep, a.trials, a.jobs, not a.no_matched_filter, a.seed)
    fields = ["param", "value", "metric", "mean", "std", "trials"]
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if a.out:
            fh.close()
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="havok-detect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="detect events in a series")
    d.add_argument("--input", required=True)
    d.add_argument("--format", choices=("csv", "json-lines"), default="csv")
    d.add_argument("--column", default="0", help="value column (index or header name)")
    d.add_argument("--truth-column", default=None, help="optional 0/1 truth column, used only for scoring")
    d.add_argument("--ts", type=float, default=1.0, help="sample period in seconds")
    d.add_argument("--out", default=None, help="report JSON path (stdout if omitted)")
    d.add_argument("--dump-traces", default=None, metavar="DIR",
                   help="write trace.csv, spectrum.csv and histogram.csv here")
    d.add_argument("--M", type=int, default=None)
    d.add_argument("--r", type=int, default=None)
    d.add_argument("--L", type=int, default=None, help="sector length (even)")
    d.add_argument("--auto", action="store_true", help="select M and r automatically (the default)")
    d.add_argument("--min-interval", type=float, default=None,
                   help="minimum stimulus interval in seconds, sets L when --L is absent")
    d.add_argument("--min-separation", type=int, default=None)
    d.add_argument("--robust", action="store_true")
    d.add_argument("--two-sided", action="store_true")
    d.add_argument("--hilbert", action="store_true")
    d.add_argument("--matched-filter", default=None, metavar="FILE", help="pulse template CSV")
    d.add_argument("--bins", type=int, default=None)
    d.add_argument("--threshold", choices=("mixture_fit", "detachment"), default="mixture_fit")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("synth", help="write a synthetic series and its ground truth")
    s.add_argument("scenario", choices=SCENARIOS)
    s.add_argument("--out", required=True, help="data CSV path")
    s.add_argument("--truth", default=None, help="truth CSV path (default <out>_truth.csv)")
    s.add_argument("--rate", type=float, default=None)
    s.add_argument("--noise", type=float, default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--slots", type=int, default=None)
    s.add_argument("--windows", type=int, default=None)
    s.add_argument("--drift", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="metric sweep over seeds")
    b.add_argument("scenario", choices=SCENARIOS)
    b.add_argument("--sweep", required=True, help="e.g. noise=0.05,0.1,0.2")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--seed", type=int, default=0, help="first seed")
    b.add_argument("--no-matched-filter", action="store_true", help="mud ablation")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def _setup_logging():
    level = os.environ.get("HAVOK_DETECT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
