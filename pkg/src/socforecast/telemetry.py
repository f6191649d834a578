"""Battery pack telemetry: data model, synthetic generator, CSV I/O and splitting.

Current is signed with charging positive. Each record holds the state at the
end of one sampling interval, so record ``k`` already includes the charge
moved by its own current sample.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, ProfileNotFoundError, SchemaError, ValidationError

CELL_CAPACITY_AH = 72.0
CAPACITY_RANGE_AH = (360.0, 504.0)
CELL_NOMINAL_V = 3.2
IDLE_THRESHOLD_A = 0.5
R_INTERNAL_OHM = 0.5e-3  # per cell string
THERMAL_ALPHA = 1e-4  # degC per A^2
AMBIENT_C = 25.0
THERMAL_TAU_S = 1800.0
VOLTAGE_NOISE_V = 1e-3

# Per-cell open-circuit voltage, piecewise linear in SoC percent (LFP-like plateau).
OCV_SOC = np.array([0.0, 10.0, 95.0, 100.0])
OCV_VOLTS = np.array([3.00, 3.20, 3.33, 3.45])


class Mode(Enum):
    CHARGING = "CHG"
    DISCHARGING = "DIS"
    IDLE = "IDLE"

    @classmethod
    def from_current(cls, current: float, threshold: float = IDLE_THRESHOLD_A) -> "Mode":
        if current > threshold:
            return cls.CHARGING
        if current < -threshold:
            return cls.DISCHARGING
        return cls.IDLE


MODE_CODES = {Mode.CHARGING: 1, Mode.DISCHARGING: -1, Mode.IDLE: 0}
CODE_MODES = {v: k for k, v in MODE_CODES.items()}


def mode_codes(current: np.ndarray, threshold: float = IDLE_THRESHOLD_A) -> np.ndarray:
    """Vectorised mode labels: +1 charging, -1 discharging, 0 idle."""
    current = np.asarray(current, dtype=np.float64)
    return np.where(current > threshold, 1, np.where(current < -threshold, -1, 0)).astype(np.int8)


def ocv(soc) -> np.ndarray:
    return np.interp(soc, OCV_SOC, OCV_VOLTS)


@dataclass(frozen=True)
class BatterySpec:
    capacity_ah: float = 360.0
    cells_series: int = 16
    cell_capacity_ah: float = CELL_CAPACITY_AH
    coulombic_efficiency: float = 1.0

    def __post_init__(self):
        if self.cells_series < 1:
            raise ValueError("cells_series must be at least 1")
        if not 0.0 < self.coulombic_efficiency <= 1.0:
            raise ValueError("coulombic_efficiency must lie in (0, 1]")
        if not CAPACITY_RANGE_AH[0] <= self.capacity_ah <= CAPACITY_RANGE_AH[1]:
            raise ValueError(f"capacity_ah must lie in {list(CAPACITY_RANGE_AH)}, got {self.capacity_ah}")
        parallel = self.capacity_ah / self.cell_capacity_ah
        if parallel < 1 or abs(parallel - round(parallel)) > 1e-9:
            raise ValueError(
                f"capacity {self.capacity_ah} Ah is not a whole number of {self.cell_capacity_ah} Ah strings"
            )

    @property
    def strings_parallel(self) -> int:
        return int(round(self.capacity_ah / self.cell_capacity_ah))

    @property
    def nominal_voltage(self) -> float:
        return self.cells_series * CELL_NOMINAL_V


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: float
    mode: Mode
    pack_voltage: float
    cell_voltages: tuple[float, ...]
    current: float
    temperature: float
    soc: float
    ah_charged_cum: float
    ah_discharged_cum: float


@dataclass(frozen=True)
class UserProfile:
    """A duty cycle of ``(mode, current_A, duration_s)`` segments, repeated as needed.

    The mode of a segment is informational; the recorded mode always follows
    the sign of the sampled current.
    """

    name: str
    segments: tuple[tuple[str, float, float], ...]
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("profile needs at least one segment")
        for mode, _, duration in self.segments:
            if duration <= 0:
                raise ValueError(f"segment durations must be positive, got {duration}")
            if mode not in ("CHG", "DIS", "IDLE"):
                raise ValueError(f"unknown segment mode {mode!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def current_at(self, t: np.ndarray) -> np.ndarray:
        """Nominal (noise-free) current at elapsed times ``t`` seconds."""
        durations = np.array([s[2] for s in self.segments], dtype=np.float64)
        currents = np.array([s[1] for s in self.segments], dtype=np.float64)
        edges = np.concatenate([[0.0], np.cumsum(durations)])
        phase = np.mod(t, edges[-1])
        idx = np.searchsorted(edges, phase, side="right") - 1
        return currents[np.clip(idx, 0, len(currents) - 1)]


PROFILES: dict[str, UserProfile] = {
    p.name: p
    for p in (
        UserProfile("idle", (("IDLE", 0.0, 3600.0),)),
        UserProfile("constant_charge", (("CHG", 72.0, 3600.0),)),
        # Single-shift warehouse truck: long discharge, midday break, opportunity charge.
        UserProfile(
            "cycle_a",
            (
                ("DIS", -60.0, 4 * 3600.0),
                ("IDLE", 0.0, 3600.0),
                ("DIS", -90.0, 2 * 3600.0),
                ("IDLE", 0.0, 2 * 3600.0),
                ("CHG", 120.0, 4 * 3600.0),
                ("IDLE", 0.0, 2 * 3600.0),
            ),
            noise_std=2.0,
        ),
        # Heavier two-shift duty with partial charges.
        UserProfile(
            "cycle_b",
            (
                ("DIS", -110.0, 2.5 * 3600.0),
                ("IDLE", 0.0, 1800.0),
                ("CHG", 150.0, 1.5 * 3600.0),
                ("DIS", -80.0, 3 * 3600.0),
                ("IDLE", 0.0, 3600.0),
                ("CHG", 150.0, 3 * 3600.0),
                ("IDLE", 0.0, 1.5 * 3600.0),
            ),
            noise_std=3.0,
        ),
        # Mixed duty alternating light and heavy shifts of different lengths.
        UserProfile(
            "mixed",
            (
                ("DIS", -70.0, 3 * 3600.0),
                ("IDLE", 0.0, 3600.0),
                ("DIS", -120.0, 1.5 * 3600.0),
                ("CHG", 140.0, 2 * 3600.0),
                ("IDLE", 0.0, 1800.0),
                ("DIS", -45.0, 4 * 3600.0),
                ("IDLE", 0.0, 2 * 3600.0),
                ("CHG", 100.0, 4 * 3600.0),
                ("IDLE", 0.0, 3600.0),
            ),
            noise_std=2.5,
        ),
    )
}


def get_profile(name: str) -> UserProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ProfileNotFoundError(f"unknown user profile {name!r}; known: {sorted(PROFILES)}") from None


@dataclass(frozen=True, eq=False)
class TelemetrySeries:
    """Columnar, time-ordered telemetry. Indexing yields :class:`TelemetryRecord` objects."""

    spec: BatterySpec
    dt: float
    timestamp: np.ndarray
    current: np.ndarray
    pack_voltage: np.ndarray
    cell_voltages: np.ndarray  # (n, cells_series)
    temperature: np.ndarray
    soc: np.ndarray
    ah_charged: np.ndarray
    ah_discharged: np.ndarray
    mode: np.ndarray = field(default=None)  # int8 codes, see MODE_CODES

    def __post_init__(self):
        for name in ("timestamp", "current", "pack_voltage", "temperature", "soc", "ah_charged", "ah_discharged"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        cells = np.asarray(self.cell_voltages, dtype=np.float64).reshape(len(self.timestamp), self.spec.cells_series)
        cells.setflags(write=False)
        object.__setattr__(self, "cell_voltages", cells)
        modes = mode_codes(self.current) if self.mode is None else np.asarray(self.mode, dtype=np.int8)
        modes.setflags(write=False)
        object.__setattr__(self, "mode", modes)

    COLUMNS = ("timestamp", "current", "pack_voltage", "temperature", "soc", "ah_charged", "ah_discharged")

    def __len__(self) -> int:
        return len(self.timestamp)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return self.slice(k)
        return TelemetryRecord(
            float(self.timestamp[k]),
            CODE_MODES[int(self.mode[k])],
            float(self.pack_voltage[k]),
            tuple(float(v) for v in self.cell_voltages[k]),
            float(self.current[k]),
            float(self.temperature[k]),
            float(self.soc[k]),
            float(self.ah_charged[k]),
            float(self.ah_discharged[k]),
        )

    @property
    def records(self) -> list[TelemetryRecord]:
        return [self[k] for k in range(len(self))]

    def slice(self, sl: slice) -> "TelemetrySeries":
        kw = {name: getattr(self, name)[sl] for name in self.COLUMNS}
        return TelemetrySeries(self.spec, self.dt, cell_voltages=self.cell_voltages[sl], mode=self.mode[sl], **kw)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TelemetrySeries):
            return NotImplemented
        if self.spec != other.spec or self.dt != other.dt or len(self) != len(other):
            return False
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in (*self.COLUMNS, "cell_voltages", "mode")
        )

    def column(self, name: str) -> np.ndarray:
        """Named feature column; ``cell_v_01``... address individual cells."""
        if name.startswith("cell_v_"):
            return self.cell_voltages[:, int(name[7:]) - 1]
        return getattr(self, name)

    def feature_matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names])


def concat(a: TelemetrySeries, b: TelemetrySeries) -> TelemetrySeries:
    if a.spec != b.spec or a.dt != b.dt:
        raise ValueError("cannot concatenate series with different spec or dt")
    kw = {n: np.concatenate([getattr(a, n), getattr(b, n)]) for n in TelemetrySeries.COLUMNS}
    return TelemetrySeries(
        a.spec,
        a.dt,
        cell_voltages=np.vstack([a.cell_voltages, b.cell_voltages]),
        mode=np.concatenate([a.mode, b.mode]),
        **kw,
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate_synthetic(
    spec: BatterySpec,
    profile: UserProfile | str,
    steps: int,
    dt: float,
    seed: int,
    initial_soc: float = 50.0,
    voltage_noise: float = VOLTAGE_NOISE_V,
) -> TelemetrySeries:
    """Simulate a pack driven by ``profile`` with a zero-order equivalent circuit.

    Whenever a sampled current would carry SoC past 0 % or 100 %, that step
    is forced to Idle (zero current) instead.
    """
    if steps < 2:
        raise ValueError(f"steps must be at least 2, got {steps}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not 0.0 <= initial_soc <= 100.0:
        raise ValueError("initial_soc must lie in [0, 100]")
    if isinstance(profile, str):
        profile = get_profile(profile)

    rng = np.random.default_rng(seed)
    # Each step's current is sampled at the start of its interval.
    nominal = profile.current_at(np.arange(steps) * dt)
    noise = rng.normal(0.0, 1.0, steps) * profile.noise_std
    sampled = np.where(nominal != 0.0, nominal + noise, 0.0)
    cell_noise = rng.normal(0.0, 1.0, (steps, spec.cells_series)) * voltage_noise

    eta = spec.coulombic_efficiency
    cap = spec.capacity_ah
    hours = dt / 3600.0
    current = np.empty(steps)
    soc = np.empty(steps)
    ah_c = np.empty(steps)
    ah_d = np.empty(steps)
    temp = np.empty(steps)
    s, qc, qd, T = float(initial_soc), 0.0, 0.0, AMBIENT_C
    lag = min(1.0, dt / THERMAL_TAU_S)
    for k in range(steps):
        i = float(sampled[k])
        dc = max(i, 0.0) * hours
        dd = max(-i, 0.0) * hours
        s_next = s + 100.0 * (eta * dc - dd) / cap
        if s_next > 100.0 or s_next < 0.0:
            i, dc, dd, s_next = 0.0, 0.0, 0.0, s
        s, qc, qd = s_next, qc + dc, qd + dd
        T = T + lag * (AMBIENT_C + THERMAL_ALPHA * i * i - T)
        current[k], soc[k], ah_c[k], ah_d[k], temp[k] = i, s, qc, qd, T

    # Terminal voltage rises above OCV while charging (positive current).
    drop = current * R_INTERNAL_OHM / spec.strings_parallel
    cells = ocv(soc)[:, None] + drop[:, None] + cell_noise
    pack = cells.sum(axis=1)
    return TelemetrySeries(
        spec,
        float(dt),
        timestamp=(np.arange(steps) + 1) * float(dt),
        current=current,
        pack_voltage=pack,
        cell_voltages=cells,
        temperature=temp,
        soc=soc,
        ah_charged=ah_c,
        ah_discharged=ah_d,
    )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

BASE_HEADER = ("timestamp", "mode", "pack_voltage", "current", "temperature", "soc", "ah_charged", "ah_discharged")


def cell_columns(n: int) -> list[str]:
    return [f"cell_v_{k:02d}" for k in range(1, n + 1)]


def csv_header(cells_series: int = 16) -> list[str]:
    return [*BASE_HEADER, *cell_columns(cells_series)]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(series: TelemetrySeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(series.spec.cells_series))
        for k in range(len(series)):
            w.writerow(
                [
                    _fmt(series.timestamp[k]),
                    CODE_MODES[int(series.mode[k])].value,
                    _fmt(series.pack_voltage[k]),
                    _fmt(series.current[k]),
                    _fmt(series.temperature[k]),
                    _fmt(series.soc[k]),
                    _fmt(series.ah_charged[k]),
                    _fmt(series.ah_discharged[k]),
                    *(_fmt(v) for v in series.cell_voltages[k]),
                ]
            )


def load_csv(path, spec: BatterySpec | None = None) -> TelemetrySeries:
    """Parse and validate a telemetry CSV. Row numbers in errors are 1-based data rows."""
    spec = spec or BatterySpec()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        expected = csv_header(spec.cells_series)
        missing = [c for c in expected if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        if header != expected:
            raise SchemaError(f"{path}: header does not match the expected schema {expected}")
        rows = list(reader)

    n = len(rows)
    values = np.empty((n, len(expected) - 1))
    modes = np.empty(n, dtype=np.int8)
    mode_by_text = {m.value: MODE_CODES[m] for m in Mode}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(expected):
            raise ParseError(f"row {r}: expected {len(expected)} fields, got {len(row)}", row=r)
        try:
            modes[r - 1] = mode_by_text[row[1]]
        except KeyError:
            raise ParseError(f"row {r}, column 'mode': unknown mode {row[1]!r}", row=r, column="mode") from None
        for c, text in enumerate(row):
            if c == 1:
                continue
            try:
                v = float(text)
            except ValueError:
                col = expected[c]
                raise ParseError(f"row {r}, column {col!r}: cannot parse {text!r}", row=r, column=col) from None
            if not math.isfinite(v):
                col = expected[c]
                raise ParseError(f"row {r}, column {col!r}: non-finite value {text!r}", row=r, column=col)
            values[r - 1, c if c == 0 else c - 1] = v

    if n < 2:
        raise ValidationError(f"{path}: series length must be >= 2, got {n}")
    ts, pack, cur, temp, soc, ahc, ahd = (values[:, k] for k in range(7))
    cells = values[:, 7:]

    def fail(mask: np.ndarray, what: str, offset: int = 0):
        bad = np.flatnonzero(mask)
        if bad.size:
            row = int(bad[0]) + 1 + offset
            raise ValidationError(f"row {row}: {what}", row=row)

    fail(np.diff(ts) <= 0, "timestamps must be strictly increasing", offset=1)
    dt = float(ts[1] - ts[0])
    fail(np.abs(np.diff(ts) - dt) > 1e-9 * max(1.0, abs(dt)) + 1e-9 * np.abs(ts[1:]), "timestamp stride is not constant", offset=1)
    fail((soc < 0) | (soc > 100), "soc outside [0, 100]")
    fail((ahc < 0) | (ahd < 0), "cumulative Ah counters must be non-negative")
    fail(np.diff(ahc) < 0, "ah_charged decreases", offset=1)
    fail(np.diff(ahd) < 0, "ah_discharged decreases", offset=1)
    fail(pack <= 0, "pack_voltage must be positive")
    fail(modes != mode_codes(cur), "mode does not match the sign of current")

    return TelemetrySeries(
        spec,
        dt,
        timestamp=ts,
        current=cur,
        pack_voltage=pack,
        cell_voltages=cells,
        temperature=temp,
        soc=soc,
        ah_charged=ahc,
        ah_discharged=ahd,
        mode=modes,
    )


def chronological_split(series: TelemetrySeries, ratio: float = 0.8) -> tuple[TelemetrySeries, TelemetrySeries]:
    """Earliest ``floor(ratio * n)`` records for training, the rest for validation."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    if len(series) < 2:
        raise ValueError("series must hold at least 2 records")
    cut = int(math.floor(ratio * len(series)))
    return series.slice(slice(0, cut)), series.slice(slice(cut, None))
