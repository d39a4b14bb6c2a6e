"""Cohort file IO, deterministic stratified splits, day-band filtering, and a
synthetic two-channel CTG generator.

The generator builds class-conditioned traces from clinically motivated
motifs: controls (label 0) get a steady baseline with pronounced short-term
variability and accelerations; cases (label 1) get reduced variability and
decelerations that lag contraction peaks. An effect-drift slope ties the
strength of the adverse pattern to days-to-delivery, so recordings taken close
to delivery show subtler patterns than those taken days earlier. Everything is
deterministic in the generator spec, with per-trace derived seeds.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .signal import MISSING, RawTrace, Trace, WINDOW_LEN, preprocess

GENERATOR_VERSION = 1
COHORT_HEADER = "#ctg-cohort v1"
RAW_HEADER = "#ctg-raw v1"
_WINDOW_ID = re.compile(r".*:w(\d+)$")


@dataclass
class GenSpec:
    """Parameters of the synthetic cohort generator. Rates are events/hour."""

    n_per_class: int = 100
    seed: int = 0
    baseline_range: tuple = (115.0, 155.0)
    npo_variability: tuple = (10.0, 22.0)   # short-term variability amplitude, bpm
    apo_variability: tuple = (2.0, 6.0)
    npo_accel_rate: float = 5.0
    apo_accel_rate: float = 1.0
    npo_decel_rate: float = 0.5
    apo_decel_rate: float = 0.0             # APO decels come from contraction coupling
    contraction_rate: float = 10.0
    decel_lag_range: tuple = (8.0, 16.0)    # samples between contraction peak and nadir
    coupling_prob: float = 0.85             # chance a contraction triggers a late decel
    missing_rate: float = 0.04
    dtd_days: tuple = (0, 7)                # inclusive integer range
    drift_intercept: float = 0.25           # adverse strength s = intercept + slope * dtd
    drift_slope: float = 0.107

    def __post_init__(self):
        for name in ("npo_accel_rate", "apo_accel_rate", "npo_decel_rate",
                     "apo_decel_rate", "contraction_rate", "missing_rate"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        for name in ("baseline_range", "npo_variability", "apo_variability", "decel_lag_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DataError(f"{name} must be a non-degenerate (low, high) range")
        if self.n_per_class < 1:
            raise DataError("n_per_class must be at least 1")

    def adverse_strength(self, dtd: float) -> float:
        return float(np.clip(self.drift_intercept + self.drift_slope * dtd, 0.0, 1.0))

    def expected_stv_margin(self) -> float:
        """Conservative lower bound on the class gap in mean short-term
        variability (scaled units).

        The variability component is amp * 0.5 * MA3(gaussian noise), whose
        successive differences have std amp * sqrt(2)/6 and mean magnitude
        amp * 0.188. Case amplitude is pulled toward the control midpoint by
        (1 - strength); a 0.6 safety factor absorbs the other motifs.
        """
        npo_mid = 0.5 * sum(self.npo_variability)
        apo_mid = 0.5 * sum(self.apo_variability)
        days = range(int(self.dtd_days[0]), int(self.dtd_days[1]) + 1)
        mean_s = float(np.mean([self.adverse_strength(d) for d in days]))
        eff_apo = apo_mid + (npo_mid - apo_mid) * (1.0 - mean_s)
        return 0.6 * 0.188 * (npo_mid - eff_apo) / 200.0


@dataclass
class Cohort:
    traces: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.trace_id for t in self.traces]
        if len(set(ids)) != len(ids):
            raise DataError("trace ids must be unique within a cohort")

    @property
    def class_counts(self) -> tuple:
        pos = sum(1 for t in self.traces if t.label == 1)
        return (len(self.traces) - pos, pos)

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.traces:
            h.update(t.trace_id.encode())
            h.update(bytes([t.label]))
            h.update(np.float64(t.days_to_delivery).tobytes())
            h.update(t.fhr.tobytes())
            h.update(t.toco.tobytes())
            h.update(np.packbits(t.fhr_mask).tobytes())
            h.update(np.packbits(t.toco_mask).tobytes())
        return h.hexdigest()


def _bumps(n: int, times: np.ndarray, amps: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Sum of Gaussian bumps evaluated on the sample grid."""
    out = np.zeros(n)
    t = np.arange(n)
    for c, a, s in zip(times, amps, sigmas):
        out += a * np.exp(-0.5 * ((t - c) / s) ** 2)
    return out


def _missing_bursts(rng: np.random.Generator, n: int, rate: float, cap: float = 0.25) -> np.ndarray:
    """Boolean missing mask built from short dropout bursts, capped so no
    window ever violates the 30% preprocessing rule."""
    missing = np.zeros(n, dtype=bool)
    if rate <= 0:
        return missing
    n_bursts = rng.poisson(rate * n / 4.0)
    for _ in range(n_bursts):
        start = int(rng.integers(0, n))
        length = 1 + int(rng.geometric(0.25))
        stop = min(n, start + length)
        if (missing.sum() + (stop - start)) / n > cap:
            break
        missing[start:stop] = True
    return missing


def _synth_trace(spec: GenSpec, label: int, index: int) -> RawTrace:
    rng = np.random.default_rng([spec.seed, label, index])
    n = WINDOW_LEN
    dtd = int(rng.integers(spec.dtd_days[0], spec.dtd_days[1] + 1))
    strength = spec.adverse_strength(dtd) if label == 1 else 0.0

    baseline = rng.uniform(*spec.baseline_range)
    t = np.arange(n)
    wander = np.zeros(n)
    for _ in range(2):
        period = rng.uniform(150, 450)
        wander += rng.uniform(1.0, 4.0) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))

    # Short-term variability: smoothed noise with class-conditional amplitude.
    # Case variability is pulled toward the control range as strength fades,
    # so near-delivery cases are the subtle ones.
    if label == 0:
        stv_amp = rng.uniform(*spec.npo_variability)
    else:
        base = rng.uniform(*spec.apo_variability)
        npo_mid = 0.5 * (spec.npo_variability[0] + spec.npo_variability[1])
        stv_amp = base + (npo_mid - base) * (1.0 - strength)
    noise = rng.normal(size=n)
    kernel = np.ones(3) / 3.0
    smooth = np.convolve(noise, kernel, mode="same")
    variability = stv_amp * 0.5 * smooth

    hours = 1.0
    n_accels = rng.poisson((spec.npo_accel_rate if label == 0 else spec.apo_accel_rate) * hours)
    accels = _bumps(n, rng.uniform(0, n, n_accels), rng.uniform(10, 25, n_accels),
                    rng.uniform(2.5, 5.0, n_accels))

    # Uterine activity: baseline tone plus contraction bumps.
    n_contr = rng.poisson(spec.contraction_rate * hours)
    contr_times = np.sort(rng.uniform(0, n, n_contr))
    contr_amps = rng.uniform(30, 70, n_contr)
    contr_sigmas = rng.uniform(6, 12, n_contr)
    toco = rng.uniform(5, 12) + 2.0 * np.convolve(rng.normal(size=n), kernel, mode="same")
    toco += _bumps(n, contr_times, contr_amps, contr_sigmas)

    decels = np.zeros(n)
    n_spont = rng.poisson(spec.npo_decel_rate * hours if label == 0 else spec.apo_decel_rate * hours)
    decels -= _bumps(n, rng.uniform(0, n, n_spont), rng.uniform(10, 20, n_spont),
                     rng.uniform(3, 6, n_spont))
    if label == 1:
        # late decelerations: nadir trails each contraction peak by the lag
        depth_scale = 0.35 + 0.65 * strength
        for c in contr_times:
            if rng.random() < spec.coupling_prob:
                lag = rng.uniform(*spec.decel_lag_range)
                decels -= _bumps(n, np.array([c + lag]),
                                 np.array([rng.uniform(20, 45) * depth_scale]),
                                 np.array([rng.uniform(4, 8)]))

    fhr = baseline + wander + variability + accels + decels
    fhr = np.clip(fhr, 55.0, 245.0)   # strictly inside the clip range: no clipping losses
    toco = np.clip(toco, 0.0, 95.0)

    fhr[_missing_bursts(rng, n, spec.missing_rate)] = MISSING
    toco[_missing_bursts(rng, n, spec.missing_rate * 0.5)] = MISSING

    trace_id = f"syn{spec.seed}-{'apo' if label else 'npo'}-{index:05d}"
    return RawTrace(trace_id=trace_id, fhr=fhr, toco=toco, label=label,
                    days_to_delivery=float(dtd))


def generate_cohort(spec: GenSpec) -> Cohort:
    """Balanced synthetic cohort, one 960-sample window per trace, already
    preprocessed. Deterministic in ``spec``."""
    traces = []
    for label in (0, 1):
        for i in range(spec.n_per_class):
            windows = preprocess(_synth_trace(spec, label, i))
            if len(windows) != 1:
                raise DataError(f"generator produced {len(windows)} windows for one trace; "
                                "missing-data cap violated")
            traces.append(windows[0])
    return Cohort(traces=traces, provenance={"kind": "synthetic", "seed": spec.seed,
                                             "generator_version": GENERATOR_VERSION})


def short_term_variability(values: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute successive difference over observed sample pairs."""
    both = mask[:-1] & mask[1:]
    if not both.any():
        return 0.0
    return float(np.abs(np.diff(values))[both].mean())


def write_cohort(cohort: Cohort, path) -> None:
    """One trace per line: id, label, days to delivery, 960 fhr then 960 toco
    values with -1 at unobserved positions."""
    with open(path, "w") as fh:
        fh.write(COHORT_HEADER + "\n")
        for t in cohort.traces:
            fhr = np.where(t.fhr_mask, t.fhr, MISSING)
            toco = np.where(t.toco_mask, t.toco, MISSING)
            fields = [t.trace_id, str(t.label), repr(float(t.days_to_delivery))]
            fields += [repr(float(v)) for v in fhr]
            fields += [repr(float(v)) for v in toco]
            fh.write(",".join(fields) + "\n")


def _window_index_from_id(trace_id: str) -> int:
    m = _WINDOW_ID.match(trace_id)
    return int(m.group(1)) if m else 0


def read_cohort(path) -> Cohort:
    traces = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != COHORT_HEADER:
            raise DataError(f"{path}: expected header {COHORT_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 3 + 2 * WINDOW_LEN:
                raise DataError(f"{path}:{lineno}: expected {3 + 2 * WINDOW_LEN} fields, "
                                f"got {len(fields)}")
            trace_id = fields[0]
            try:
                label = int(fields[1])
                dtd = float(fields[2])
                values = np.array([float(v) for v in fields[3:]], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
            fhr_raw, toco_raw = values[:WINDOW_LEN], values[WINDOW_LEN:]
            fhr_mask, toco_mask = fhr_raw != MISSING, toco_raw != MISSING
            try:
                traces.append(Trace(
                    trace_id=trace_id,
                    fhr=np.where(fhr_mask, fhr_raw, 0.0),
                    toco=np.where(toco_mask, toco_raw, 0.0),
                    fhr_mask=fhr_mask, toco_mask=toco_mask,
                    label=label, days_to_delivery=dtd,
                    window_index=_window_index_from_id(trace_id),
                ))
            except Exception as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return Cohort(traces=traces, provenance={"kind": "file", "path": str(path)})


def write_raw_traces(raws: Sequence[RawTrace], path) -> None:
    """Variable-length raw traces: id, label, dtd, length, fhr values, toco values."""
    with open(path, "w") as fh:
        fh.write(RAW_HEADER + "\n")
        for r in raws:
            fields = [r.trace_id, str(r.label), repr(float(r.days_to_delivery)), str(len(r.fhr))]
            fields += [repr(float(v)) for v in r.fhr]
            fields += [repr(float(v)) for v in r.toco]
            fh.write(",".join(fields) + "\n")


def read_raw_traces(path) -> list:
    raws = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != RAW_HEADER:
            raise DataError(f"{path}: expected header {RAW_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) < 4:
                raise DataError(f"{path}:{lineno}: truncated record")
            try:
                label, dtd, n = int(fields[1]), float(fields[2]), int(fields[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
            if len(fields) != 4 + 2 * n:
                raise DataError(f"{path}:{lineno}: expected {4 + 2 * n} fields for "
                                f"length {n}, got {len(fields)}")
            try:
                values = np.array([float(v) for v in fields[4:]], dtype=np.float64)
                raws.append(RawTrace(trace_id=fields[0], fhr=values[:n], toco=values[n:],
                                     label=label, days_to_delivery=dtd))
            except Exception as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return raws


def split(cohort: Cohort, fraction: float = 0.8, seed: int = 0) -> tuple:
    """Label-stratified partition into (train, val), deterministic per seed."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for label in (0, 1):
        members = [t for t in cohort.traces if t.label == label]
        if len(members) < 2:
            raise DataError(f"class {label} has {len(members)} traces; need at least 2 to split")
        order = rng.permutation(len(members))
        n_train = int(round(fraction * len(members)))
        n_train = min(max(n_train, 1), len(members) - 1)
        for pos, idx in enumerate(order):
            (train if pos < n_train else val).append(members[idx])
    prov = dict(cohort.provenance)
    return (Cohort(traces=train, provenance={**prov, "split": "train", "fraction": fraction}),
            Cohort(traces=val, provenance={**prov, "split": "val", "fraction": fraction}))


def filter_dtd(cohort: Cohort, band) -> Cohort:
    """Restrict case traces to a days-to-delivery band; controls are kept.

    ``band`` is either a max-days scalar (band [0, max]) or a (low, high)
    inclusive pair.
    """
    lo, hi = (0.0, float(band)) if np.isscalar(band) else (float(band[0]), float(band[1]))
    if lo > hi or lo < 0:
        raise DataError(f"invalid days-to-delivery band [{lo}, {hi}]")
    kept = [t for t in cohort.traces
            if t.label == 0 or lo <= t.days_to_delivery <= hi]
    if not any(t.label == 1 for t in kept):
        raise DataError(f"no case traces inside days-to-delivery band [{lo}, {hi}]")
    return Cohort(traces=kept, provenance={**cohort.provenance, "dtd_band": (lo, hi)})


def stack_traces(traces: Sequence[Trace]) -> dict:
    """Batch traces into contiguous arrays for the model."""
    if not traces:
        raise DataError("cannot stack an empty trace list")
    return {
        "fhr": np.stack([t.fhr for t in traces]),
        "toco": np.stack([t.toco for t in traces]),
        "fhr_mask": np.stack([t.fhr_mask for t in traces]),
        "toco_mask": np.stack([t.toco_mask for t in traces]),
        "labels": np.array([t.label for t in traces], dtype=np.float64),
        "dtd": np.array([t.days_to_delivery for t in traces]),
        "ids": [t.trace_id for t in traces],
    }
