"""Delimited-text input and output.

Every output file starts with a metadata comment line carrying the package
version, the seed and the config hash; parsers skip comment lines and reject
schema violations with the offending line number. Floats are written with
``repr`` so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .observation import DelayDistribution, SurveillanceData
from .seir import ContactPeriod, ContactSchedule, PopulationStructure

PACKAGE_VERSION = "0.1.0"

DEATHS_COLUMNS = ["region", "day", "age", "count"]
SEROLOGY_COLUMNS = ["region", "day", "age", "positives", "samples"]
POPULATIONS_COLUMNS = ["region", "age", "N"]
DELAY_COLUMNS = ["lag_day", "cdf"]
SCORES_COLUMNS = ["region", "day", "interval_score", "crps", "width", "sq_error"]
FORECAST_COLUMNS = ["draw", "region", "day", "age", "deaths"]


def metadata_line(seed, config_hash: str = "none", **extra) -> str:
    parts = [f"epigmrf={PACKAGE_VERSION}", f"seed={seed}", f"config_hash={config_hash}"]
    parts.extend(f"{k}={v}" for k, v in sorted(extra.items()))
    return "# " + " ".join(parts)


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_table(path, columns, rows, meta: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(meta + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format(v) for v in row) + "\n")


def read_table(path, expected_columns):
    """Parse a strict-schema table; returns (rows, meta_line or None).

    Unknown or missing columns and malformed rows raise DataFormatError with
    the 1-based line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing data file: {path}")
    meta = None
    rows = []
    with open(path, newline="") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if meta is None:
                    meta = line
                continue
            fields = next(csv.reader(io.StringIO(line)))
            if header is None:
                header = [f.strip() for f in fields]
                if header != list(expected_columns):
                    unknown = [c for c in header if c not in expected_columns]
                    missing = [c for c in expected_columns if c not in header]
                    raise DataFormatError(
                        f"{path}:{lineno}: bad header (unknown {unknown}, missing {missing})"
                    )
                continue
            if len(fields) != len(expected_columns):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(expected_columns)} fields, got {len(fields)}"
                )
            rows.append((lineno, fields))
    if header is None:
        raise DataFormatError(f"{path}: no header line found")
    return rows, meta


def _parse_int(path, lineno, name, value) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: column {name} is not an integer: {value!r}") from exc


def _parse_float(path, lineno, name, value) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: column {name} is not a number: {value!r}") from exc


def load_populations(path) -> PopulationStructure:
    rows, _ = read_table(path, POPULATIONS_COLUMNS)
    cells = {}
    for lineno, f in rows:
        m = _parse_int(path, lineno, "region", f[0])
        i = _parse_int(path, lineno, "age", f[1])
        n = _parse_float(path, lineno, "N", f[2])
        if (m, i) in cells:
            raise DataFormatError(f"{path}:{lineno}: duplicate (region, age) = ({m}, {i})")
        cells[(m, i)] = n
    if not cells:
        raise DataFormatError(f"{path}: no population rows")
    n_regions = max(k[0] for k in cells) + 1
    n_ages = max(k[1] for k in cells) + 1
    counts = np.zeros((n_regions, n_ages))
    for (m, i), n in cells.items():
        counts[m, i] = n
    if np.any(counts <= 0.0):
        raise DataFormatError(f"{path}: population grid is incomplete or nonpositive")
    return PopulationStructure(counts)


def load_surveillance(
    deaths_path, serology_path, pop: PopulationStructure, steps_per_day: int
) -> SurveillanceData:
    m_count, a_count = pop.n_regions, pop.n_ages
    rows, _ = read_table(deaths_path, DEATHS_COLUMNS)
    cells = {}
    for lineno, f in rows:
        m = _parse_int(deaths_path, lineno, "region", f[0])
        d = _parse_int(deaths_path, lineno, "day", f[1])
        i = _parse_int(deaths_path, lineno, "age", f[2])
        y = _parse_int(deaths_path, lineno, "count", f[3])
        if not (0 <= m < m_count and 0 <= i < a_count and d >= 1):
            raise DataFormatError(f"{deaths_path}:{lineno}: index out of range")
        if (m, d, i) in cells:
            raise DataFormatError(f"{deaths_path}:{lineno}: duplicate cell ({m}, {d}, {i})")
        cells[(m, d, i)] = y
    if not cells:
        raise DataFormatError(f"{deaths_path}: no death rows")
    n_days = max(k[1] for k in cells)
    deaths = np.full((m_count, n_days, a_count), -1, dtype=np.int64)
    for (m, d, i), y in cells.items():
        deaths[m, d - 1, i] = y
    if np.any(deaths < 0):
        raise DataFormatError(f"{deaths_path}: death grid has missing (region, day, age) cells")

    sero_pos = np.zeros((m_count, n_days, a_count), dtype=np.int64)
    sero_n = np.zeros((m_count, n_days, a_count), dtype=np.int64)
    rows, _ = read_table(serology_path, SEROLOGY_COLUMNS)
    for lineno, f in rows:
        m = _parse_int(serology_path, lineno, "region", f[0])
        d = _parse_int(serology_path, lineno, "day", f[1])
        i = _parse_int(serology_path, lineno, "age", f[2])
        y = _parse_int(serology_path, lineno, "positives", f[3])
        n = _parse_int(serology_path, lineno, "samples", f[4])
        if not (0 <= m < m_count and 0 <= i < a_count and 1 <= d <= n_days):
            raise DataFormatError(f"{serology_path}:{lineno}: index out of range")
        sero_pos[m, d - 1, i] = y
        sero_n[m, d - 1, i] = n
    return SurveillanceData(deaths, sero_pos, sero_n, steps_per_day)


CONTACTS_FIXED = ["region", "period_start_day", "multiplier_slot", "row"]


def load_contacts(path, n_ages: int, steps_per_day: int) -> ContactSchedule:
    expected = CONTACTS_FIXED + [f"c{j}" for j in range(n_ages)]
    rows, _ = read_table(path, expected)
    periods = {}
    for lineno, f in rows:
        m = _parse_int(path, lineno, "region", f[0])
        start = _parse_int(path, lineno, "period_start_day", f[1])
        slot = _parse_int(path, lineno, "multiplier_slot", f[2])
        row = _parse_int(path, lineno, "row", f[3])
        values = [_parse_float(path, lineno, f"c{j}", f[4 + j]) for j in range(n_ages)]
        periods.setdefault(start, {"slot": slot, "rows": {}})
        if periods[start]["slot"] != slot:
            raise DataFormatError(f"{path}:{lineno}: inconsistent slot for period day {start}")
        periods[start]["rows"][(m, row)] = values
    if not periods:
        raise DataFormatError(f"{path}: no contact rows")
    n_regions = max(m for p in periods.values() for (m, _) in p["rows"]) + 1
    out = []
    for start in sorted(periods):
        info = periods[start]
        mats = np.zeros((n_regions, n_ages, n_ages))
        seen = np.zeros((n_regions, n_ages), dtype=bool)
        for (m, row), values in info["rows"].items():
            mats[m, row, :] = values
            seen[m, row] = True
        if not np.all(seen):
            raise DataFormatError(f"{path}: period day {start} is missing matrix rows")
        start_step = (start - 1) * steps_per_day + 1
        out.append(ContactPeriod(start_step=start_step, matrices=mats, slot=info["slot"]))
    return ContactSchedule(tuple(out))


def load_delay(path) -> DelayDistribution:
    rows, _ = read_table(path, DELAY_COLUMNS)
    values = {}
    for lineno, f in rows:
        lag = _parse_int(path, lineno, "lag_day", f[0])
        c = _parse_float(path, lineno, "cdf", f[1])
        if lag in values:
            raise DataFormatError(f"{path}:{lineno}: duplicate lag {lag}")
        values[lag] = c
    if not values or sorted(values) != list(range(max(values) + 1)):
        raise DataFormatError(f"{path}: delay cdf must cover lags 0..max contiguously")
    cdf = np.array([values[k] for k in sorted(values)])
    return DelayDistribution.from_cdf(cdf)


def write_deaths(path, deaths: np.ndarray, meta: str, first_day: int = 1):
    m_count, n_days, a_count = deaths.shape
    rows = [
        (m, first_day + d, i, int(deaths[m, d, i]))
        for m in range(m_count)
        for d in range(n_days)
        for i in range(a_count)
    ]
    write_table(path, DEATHS_COLUMNS, rows, meta)


def write_serology(path, sero_pos, sero_n, meta: str, first_day: int = 1):
    m_count, n_days, a_count = sero_n.shape
    rows = [
        (m, first_day + d, i, int(sero_pos[m, d, i]), int(sero_n[m, d, i]))
        for m in range(m_count)
        for d in range(n_days)
        for i in range(a_count)
        if sero_n[m, d, i] > 0
    ]
    write_table(path, SEROLOGY_COLUMNS, rows, meta)


def write_populations(path, pop: PopulationStructure, meta: str):
    rows = [
        (m, i, pop.counts[m, i])
        for m in range(pop.n_regions)
        for i in range(pop.n_ages)
    ]
    write_table(path, POPULATIONS_COLUMNS, rows, meta)


def write_contacts(path, schedule: ContactSchedule, steps_per_day: int, meta: str):
    n_ages = schedule.n_ages
    columns = CONTACTS_FIXED + [f"c{j}" for j in range(n_ages)]
    rows = []
    for period in schedule.periods:
        start_day = (period.start_step - 1) // steps_per_day + 1
        for m in range(schedule.n_regions):
            for r in range(n_ages):
                rows.append(
                    (m, start_day, period.slot, r, *[period.matrices[m, r, j] for j in range(n_ages)])
                )
    write_table(path, columns, rows, meta)


def write_delay(path, cdf: np.ndarray, meta: str):
    rows = [(lag, cdf[lag]) for lag in range(len(cdf))]
    write_table(path, DELAY_COLUMNS, rows, meta)


def write_draws_long(path, draws, meta: str):
    """Append-only long format: one (iteration, parameter, value) per line."""
    matrix, names = draws.parameter_matrix()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(meta + "\n")
        fh.write("iteration,parameter,value\n")
        for row, iteration in zip(matrix, draws.iterations):
            for name, value in zip(names, row):
                fh.write(f"{int(iteration)},{name},{float(value)!r}\n")


def write_draws_wide(path, draws, meta: str):
    matrix, names = draws.parameter_matrix()
    rows = [
        (int(iteration), *row)
        for iteration, row in zip(draws.iterations, matrix)
    ]
    write_table(path, ["iteration"] + names, rows, meta)


def read_draws_wide(path):
    """Load a wide draws table; returns (names, iterations, matrix)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing draws file: {path}")
    with open(path, newline="") as fh:
        header = None
        iterations = []
        values = []
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = next(csv.reader(io.StringIO(line)))
            if header is None:
                if fields[0] != "iteration":
                    raise DataFormatError(f"{path}:{lineno}: first column must be iteration")
                header = fields[1:]
                continue
            iterations.append(int(fields[0]))
            values.append([float(v) for v in fields[1:]])
    if header is None:
        raise DataFormatError(f"{path}: no header line found")
    return header, np.array(iterations, dtype=np.int64), np.array(values)


def write_forecasts(path, forecast_draws, meta: str, first_day: int = 1):
    n_draws, m_count, n_days, a_count = forecast_draws.deaths.shape
    rows = []
    for s in range(n_draws):
        for m in range(m_count):
            for d in range(n_days):
                for i in range(a_count):
                    rows.append((s, m, first_day + d, i, int(forecast_draws.deaths[s, m, d, i])))
    write_table(path, FORECAST_COLUMNS, rows, meta)


def read_forecasts(path):
    """Returns (deaths array (draws, regions, days, ages), first_day)."""
    rows, _ = read_table(path, FORECAST_COLUMNS)
    parsed = []
    for lineno, f in rows:
        parsed.append(tuple(_parse_int(path, lineno, c, v) for c, v in zip(FORECAST_COLUMNS, f)))
    if not parsed:
        raise DataFormatError(f"{path}: no forecast rows")
    arr = np.array(parsed, dtype=np.int64)
    n_draws = arr[:, 0].max() + 1
    m_count = arr[:, 1].max() + 1
    first_day = arr[:, 2].min()
    n_days = arr[:, 2].max() - first_day + 1
    a_count = arr[:, 3].max() + 1
    deaths = np.zeros((n_draws, m_count, n_days, a_count), dtype=np.int64)
    deaths[arr[:, 0], arr[:, 1], arr[:, 2] - first_day, arr[:, 3]] = arr[:, 4]
    return deaths, int(first_day)


def write_scores(path, report, meta: str, first_day: int = 1):
    rows = []
    for mi, m in enumerate(report.regions):
        for di, d in enumerate(report.days):
            rows.append(
                (
                    int(m),
                    first_day + int(d) - 1,
                    report.interval_score[mi, di],
                    report.crps[mi, di],
                    report.width[mi, di],
                    report.sq_error[mi, di],
                )
            )
    write_table(path, SCORES_COLUMNS, rows, meta)
