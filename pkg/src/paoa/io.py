"""JSON and CSV file formats.

Floats are written with Python's shortest round-trip repr, so every value
reloads bit-for-bit. CSV files start with a ``#`` comment line carrying the
tool version and the resolved seed, followed by a header row.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ScheduleModel
from .circuit import TwoSchedule
from .device import ActivationKind, activation_from_dict
from .emulator import ArrayModel, CalibrationMap, VariabilitySpec
from .problems import GroundStateResult, IsingInstance

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _check_version(doc: dict, kind: str):
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{kind}: unsupported format_version {doc.get('format_version')!r}")


def write_json(path: str | Path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# --- instances -------------------------------------------------------------

def instance_to_dict(inst: IsingInstance) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n": inst.n,
        "seed": inst.seed,
        "scale_convention": inst.scale_convention,
        "j_upper": _floats(inst.j_upper),
        "h": _floats(inst.h),
    }


def instance_from_dict(doc: dict) -> IsingInstance:
    _check_version(doc, "instance")
    n = int(doc["n"])
    if len(doc["j_upper"]) != n * (n - 1) // 2:
        raise FormatError("j_upper has the wrong length")
    return IsingInstance.from_upper(n, doc["j_upper"], doc.get("h"), seed=doc.get("seed"),
                                    scale_convention=doc.get("scale_convention", "sk_normalized"))


def save_instance(path, inst: IsingInstance) -> Path:
    return write_json(path, instance_to_dict(inst))


def load_instance(path) -> IsingInstance:
    return instance_from_dict(read_json(path))


def ground_state_path(instance_path) -> Path:
    p = Path(instance_path)
    return p.with_name(p.stem + ".gs.json")


def save_ground_state(path, result: GroundStateResult, inst: IsingInstance) -> Path:
    return write_json(path, {
        "format_version": FORMAT_VERSION,
        "n": inst.n,
        "instance_seed": inst.seed,
        "e_sol": float(result.e_sol),
        "argmin_state": [int(s) for s in result.argmin_state],
    })


def load_ground_state(path) -> GroundStateResult:
    doc = read_json(path)
    _check_version(doc, "ground state")
    return GroundStateResult(float(doc["e_sol"]), np.array(doc["argmin_state"], dtype=np.int8))


# --- schedules -------------------------------------------------------------

def schedule_to_dict(schedule: TwoSchedule, activation: ActivationKind,
                     provenance: dict | None = None, fit: dict | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "p": schedule.p,
        "beta1": _floats(schedule.beta1),
        "beta2": _floats(schedule.beta2),
        "activation": activation.to_dict(),
        "provenance": provenance or {},
    }
    if fit is not None:
        doc["fit"] = fit
    return doc


def save_schedule(path, schedule: TwoSchedule, activation: ActivationKind,
                  provenance: dict | None = None, fit: dict | None = None) -> Path:
    return write_json(path, schedule_to_dict(schedule, activation, provenance, fit))


def load_schedule(path) -> tuple[TwoSchedule, ActivationKind, dict]:
    doc = read_json(path)
    _check_version(doc, "schedule")
    schedule = TwoSchedule(doc["beta1"], doc["beta2"])
    if schedule.p != doc["p"]:
        raise FormatError("schedule depth does not match p")
    return schedule, activation_from_dict(doc["activation"]), doc


def model_to_dict(model: ScheduleModel) -> dict:
    return {"beta0": model.beta0, "beta_f": model.beta_f, "c": model.c, "rss": model.rss}


# --- arrays ----------------------------------------------------------------

def array_to_dict(array: ArrayModel, calibration: CalibrationMap | None = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "dims": [array.rows, array.cols],
        "seed": array.rng_seed,
        "theta": array.theta,
        "t_int": array.t_int,
        "variability": None if array.spec is None else vars(array.spec),
        "pixels": {
            "alpha": _floats(array.alpha),
            "kappa_at_ref": _floats(array.kappa_at_ref),
            "zeta": _floats(array.zeta),
        },
        "calibration": None,
    }
    if calibration is not None:
        doc["calibration"] = {
            "theta": calibration.theta,
            "v_bias": _floats(calibration.v_bias),
            "gain_k": _floats(calibration.gain_k),
            "fitted_alpha": _floats(calibration.fitted_alpha),
            "fitted_kappa": _floats(calibration.fitted_kappa),
        }
    return doc


def array_from_dict(doc: dict) -> tuple[ArrayModel, CalibrationMap | None]:
    _check_version(doc, "array")
    rows, cols = doc["dims"]
    px = doc["pixels"]
    spec = VariabilitySpec(**doc["variability"]) if doc.get("variability") else None
    array = ArrayModel(rows, cols, px["alpha"], px["kappa_at_ref"], px["zeta"],
                       doc["theta"], doc["t_int"], doc.get("seed"), spec)
    cal = None
    if doc.get("calibration"):
        c = doc["calibration"]
        # JSON has no NaN: uncalibrated entries are stored as null
        arr = lambda key: np.array([np.nan if v is None else v for v in c[key]], dtype=float)  # noqa: E731
        cal = CalibrationMap(arr("v_bias"), arr("gain_k"), arr("fitted_alpha"),
                             arr("fitted_kappa"), c["theta"])
    return array, cal


def save_array(path, array: ArrayModel, calibration: CalibrationMap | None = None) -> Path:
    doc = array_to_dict(array, calibration)
    if doc["calibration"]:
        for key, vals in doc["calibration"].items():
            if isinstance(vals, list):
                doc["calibration"][key] = [None if np.isnan(v) else v for v in vals]
    return write_json(path, doc)


def load_array(path) -> tuple[ArrayModel, CalibrationMap | None]:
    return array_from_dict(read_json(path))


# --- CSV -------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header: list[str], rows, seed) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# paoa {__version__} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
