"""Experiment runner: scene -> oracle estimates -> per-bin solves over an alpha grid -> metrics.

Results go to ``results.csv`` in the output directory, one row per
(variant, alpha, input SNR) cell, appended as cells finish. Cells already present
in the CSV are skipped on a rerun.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .beamformer import Variant
from .metrics import evaluate, shadow_filter
from .optimizer import SolveConfig, solve_all_bins
from .scene import ArrayGeometry, ScenarioSpec, build_scene
from .spectral import estimate_scene
from .speech import load_speech
from .stft import StftConfig, write_wav

log = logging.getLogger(__name__)

CSV_COLUMNS = ("variant", "alpha", "input_snr_db", "snr_out_worse_db", "snr_out_better_db",
               "delta_msc", "delta_itd_us", "cd_worse", "solver_iters", "wall_ms",
               "converged_bins", "total_bins")
RESULTS = "results.csv"
FAILURES = "failures.csv"


def default_alpha_grid() -> list[float]:
    return [0.0] + [float(a) for a in np.logspace(-4, 4, 17)]


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    stft: StftConfig = field(default_factory=StftConfig)
    solver: SolveConfig = field(default_factory=lambda: SolveConfig(keep_trace=False))
    alpha_grid: list[float] = field(default_factory=default_alpha_grid)
    variants: list[str] = field(default_factory=lambda: ["MWF", "IC_U", "IC_V"])
    snr_list: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 20.0, 50.0])
    output_dir: str = "results"
    seed: int = 0
    speech_path: str | None = None
    wav_cells: list[tuple[str, float]] = field(default_factory=list)  # (variant, alpha) pairs
    record_wall_time: bool = True

    def __post_init__(self):
        if not self.alpha_grid or not self.variants or not self.snr_list:
            raise ValueError("alpha_grid, variants and snr_list must be nonempty")
        if any(a < 0 or not math.isfinite(a) for a in self.alpha_grid):
            raise ValueError("alpha values must be finite and non-negative")
        self.variants = [Variant(v).value for v in self.variants]
        self.wav_cells = [(Variant(v).value, float(a)) for v, a in self.wav_cells]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["solver"]["init_policy"] = self.solver.init_policy.value
        out["wav_cells"] = [list(c) for c in self.wav_cells]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in (("scenario", ScenarioSpec), ("stft", StftConfig), ("solver", SolveConfig)):
            if key in data:
                data[key] = typ(**data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _key(variant: str, alpha: float, snr: float) -> tuple[str, str, str]:
    return variant, repr(float(alpha)), repr(float(snr))


def read_results(path) -> list[dict]:
    """Rows of a results CSV with numeric fields converted."""
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for col in CSV_COLUMNS[1:]:
            row[col] = float(row[col])
    return rows


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class _Cell:
    variant: str
    alpha: float
    snr: float


def _solve_cell(scene, est, cell: _Cell, config: ExperimentConfig):
    t0 = time.perf_counter()
    res = solve_all_bins(est.problem(cell.alpha, cell.variant), est.active, config.solver)
    shadow = shadow_filter(scene, res.filters, config.stft)
    report = evaluate(shadow, scene, cell.alpha, cell.variant)
    wall = (time.perf_counter() - t0) * 1e3 if config.record_wall_time else 0.0
    row = {
        "variant": cell.variant, "alpha": cell.alpha, "input_snr_db": cell.snr,
        "snr_out_worse_db": report.snr_out_worse_db,
        "snr_out_better_db": report.snr_out_better_db,
        "delta_msc": report.delta_msc, "delta_itd_us": report.delta_itd_us,
        "cd_worse": report.cd_worse, "solver_iters": res.total_iterations,
        "wall_ms": wall, "converged_bins": res.converged_bins,
        "total_bins": int(np.sum(res.active)),
    }
    return row, shadow.total


# per-process state for the worker pool
_STATE: dict = {}


def _init_worker(scene, est, config):
    _STATE.update(scene=scene, est=est, config=config)


def _worker(cell: _Cell):
    try:
        return cell, *_solve_cell(_STATE["scene"], _STATE["est"], cell, _STATE["config"]), None
    except Exception as exc:  # recorded per cell, the run continues
        return cell, None, None, f"{type(exc).__name__}: {exc}"


@dataclass
class RunSummary:
    rows_written: int
    skipped: int
    failures: list[tuple[str, float, float, str]]
    results_path: Path

    @property
    def ok(self) -> bool:
        return not self.failures


def run_experiment(config: ExperimentConfig, jobs: int = 1,
                   geometry: ArrayGeometry = ArrayGeometry()) -> RunSummary:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    results_path = out / RESULTS
    done = {_key(r["variant"], r["alpha"], r["input_snr_db"]) for r in read_results(results_path)}
    speech = load_speech(config.speech_path, config.stft)
    new_file = not results_path.exists()
    written, skipped, failures = 0, 0, []

    with results_path.open("a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(CSV_COLUMNS)
            fh.flush()
        for snr in config.snr_list:
            cells = []
            for variant in config.variants:
                for alpha in config.alpha_grid:
                    if _key(variant, alpha, snr) in done:
                        skipped += 1
                    else:
                        cells.append(_Cell(variant, float(alpha), float(snr)))
            if not cells:
                continue
            spec = replace(config.scenario, input_snr_db=float(snr), seed=config.seed)
            scene = build_scene(spec, speech, geometry, config.stft)
            est = estimate_scene(scene, geometry, config.stft)
            log.info("SNR %g dB: %d cells", snr, len(cells))
            if jobs > 1:
                pool = ProcessPoolExecutor(jobs, initializer=_init_worker,
                                           initargs=(scene, est, config))
                results = pool.map(_worker, cells)
            else:
                pool = None
                _init_worker(scene, est, config)
                results = map(_worker, cells)
            try:
                for cell, row, total, error in results:  # grid order, independent of scheduling
                    if error is not None:
                        log.warning("cell %s failed: %s", cell, error)
                        failures.append((cell.variant, cell.alpha, cell.snr, error))
                        continue
                    writer.writerow([_format(row[c]) for c in CSV_COLUMNS])
                    fh.flush()
                    written += 1
                    if (cell.variant, cell.alpha) in config.wav_cells:
                        name = f"{cell.variant}_alpha{cell.alpha:g}_snr{cell.snr:g}.wav"
                        write_wav(out / "wav" / name, total, config.stft.sample_rate)
            finally:
                if pool is not None:
                    pool.shutdown()
    if failures:
        with (out / FAILURES).open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(failures)
    return RunSummary(written, skipped, failures, results_path)


# --- summaries ---------------------------------------------------------------

SNR_SLACK_DB = 0.5
PLATEAU_TOL_DB = 0.1
MSC_NOISE = 0.01
ITD_NOISE_US = 10.0


def _non_increasing(values, slack: float) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= slack))


def summarize(rows: list[dict]) -> dict:
    """Per-variant, per-SNR trend verdicts over alpha.

    SNR must be non-increasing in alpha (0.5 dB slack per step) and plateau at the
    MWF value for small alpha; for IC_V, delta_msc and delta_itd must be
    non-increasing within estimator noise.
    """
    alphas = sorted({r["alpha"] for r in rows})
    if len(alphas) < 3:
        raise ValueError("need at least 3 alpha values to summarize trends")
    report: dict = {"variants": {}}
    mwf_snr = {r["input_snr_db"]: r["snr_out_worse_db"] for r in rows
               if r["variant"] == "MWF" and r["alpha"] == 0}
    for variant in sorted({r["variant"] for r in rows}):
        per_snr = {}
        for snr in sorted({r["input_snr_db"] for r in rows if r["variant"] == variant}):
            sel = sorted((r for r in rows if r["variant"] == variant and r["input_snr_db"] == snr),
                         key=lambda r: r["alpha"])
            snr_out = [r["snr_out_worse_db"] for r in sel]
            dmsc = [r["delta_msc"] for r in sel]
            ditd = [r["delta_itd_us"] for r in sel]
            entry = {
                "alphas": [r["alpha"] for r in sel],
                "snr_non_increasing": _non_increasing(snr_out, SNR_SLACK_DB),
                "delta_msc_non_increasing": _non_increasing(dmsc, MSC_NOISE),
                "delta_itd_non_increasing": _non_increasing(ditd, ITD_NOISE_US),
                "snr_range_db": [min(snr_out), max(snr_out)],
                "delta_msc_at_max_alpha": dmsc[-1],
                "delta_msc_at_zero_alpha": dmsc[0] if sel[0]["alpha"] == 0 else None,
                "delta_itd_at_max_alpha": ditd[-1],
                "wall_ms_total": sum(r["wall_ms"] for r in sel),
            }
            if entry["delta_msc_at_zero_alpha"]:
                entry["delta_msc_ratio"] = dmsc[-1] / dmsc[0]
            if snr in mwf_snr:
                entry["plateau_offset_db"] = snr_out[0] - mwf_snr[snr]
                entry["plateau_ok"] = abs(entry["plateau_offset_db"]) <= PLATEAU_TOL_DB
            per_snr[repr(float(snr))] = entry
        report["variants"][variant] = per_snr
    wall = {v: sum(r["wall_ms"] for r in rows if r["variant"] == v and r["alpha"] > 0)
            for v in ("IC_U", "IC_V")}
    if wall["IC_U"] > 0 and wall["IC_V"] > 0:
        report["wall_time_ratio_ic_v_over_ic_u"] = wall["IC_V"] / wall["IC_U"]
    return report
