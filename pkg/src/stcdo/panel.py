"""Observation panels of zero-coupon tranche spreads.

On-disk format is a long CSV with header
``date,maturity_years,tranche_lo,tranche_hi,zero_spread`` and one row per
observation; an empty spread field marks a missing value.  Dates are ISO
strings; observation times are assigned on the ACT/250 business-day grid in
file order (t_k = k / 250), so calendar gaps carry no weight.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import PanelFormatError

DEFAULT_DT = 1.0 / 250.0
_ATOL = 1.0e-9


@dataclass(frozen=True)
class ObservationPanel:
    """Dated spread matrix with a presence mask.

    ``spreads`` has one row per date and one column per (maturity, tranche)
    pair flattened as ``col = j * I + i`` (tranche-major), NaN where masked.
    """

    dates: tuple[str, ...]
    maturities: np.ndarray
    boundaries: np.ndarray
    spreads: np.ndarray
    mask: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        k, m = self.spreads.shape
        if len(self.dates) != k or self.mask.shape != (k, m):
            raise ValueError("panel arrays misaligned")
        if m != self.n_maturities * self.n_tranches:
            raise ValueError("spread columns do not match maturities x tranches")
        if np.any(np.diff(self.boundaries) <= 0):
            raise ValueError("tranche boundaries must be strictly increasing")
        if not np.all(np.isfinite(self.spreads[self.mask])):
            raise ValueError("observed spreads must be finite")

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_maturities(self) -> int:
        return len(self.maturities)

    @property
    def n_tranches(self) -> int:
        return len(self.boundaries) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_dates) * self.dt

    def column(self, i: int, j: int) -> int:
        """Flattened column of maturity ``i`` within tranche ``j`` (0-based)."""
        return j * self.n_maturities + i


def _match(values: np.ndarray, x: float, what: str, line: int) -> int:
    hits = np.nonzero(np.abs(values - x) < _ATOL)[0]
    if len(hits) != 1:
        raise PanelFormatError(f"line {line}: {what} {x} not in the configured grid")
    return int(hits[0])


def load_panel(path, maturities, boundaries, dt: float = DEFAULT_DT
               ) -> ObservationPanel:
    """Parse the long-format spread CSV into an :class:`ObservationPanel`."""
    maturities = np.asarray(maturities, dtype=float)
    boundaries = np.asarray(boundaries, dtype=float)
    n_i, n_j = len(maturities), len(boundaries) - 1
    cells: dict[str, dict[int, float]] = {}
    seen: set[tuple[str, int]] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for line_no, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if header != ["date", "maturity_years", "tranche_lo", "tranche_hi",
                              "zero_spread"]:
                    raise PanelFormatError(f"line {line_no}: unexpected header {header}")
                continue
            if len(row) != 5:
                raise PanelFormatError(f"line {line_no}: expected 5 fields, got {len(row)}")
            date = row[0].strip()
            try:
                tau = float(row[1])
                lo = float(row[2])
                hi = float(row[3])
            except ValueError as exc:
                raise PanelFormatError(f"line {line_no}: {exc}") from None
            i = _match(maturities, tau, "maturity", line_no)
            j = _match(boundaries[:-1], lo, "attachment", line_no)
            if abs(boundaries[j + 1] - hi) > _ATOL:
                raise PanelFormatError(
                    f"line {line_no}: detachment {hi} does not close tranche {j}"
                )
            col = j * n_i + i
            key = (date, col)
            if key in seen:
                raise PanelFormatError(f"line {line_no}: duplicate observation {key}")
            seen.add(key)
            spread_txt = row[4].strip()
            if spread_txt:
                try:
                    spread = float(spread_txt)
                except ValueError as exc:
                    raise PanelFormatError(f"line {line_no}: {exc}") from None
                if not math.isfinite(spread):
                    raise PanelFormatError(f"line {line_no}: non-finite spread")
                cells.setdefault(date, {})[col] = spread
            else:
                cells.setdefault(date, {})
    if not cells:
        raise PanelFormatError(f"{path}: empty panel")
    dates = tuple(sorted(cells))
    k, m = len(dates), n_i * n_j
    spreads = np.full((k, m), np.nan)
    mask = np.zeros((k, m), dtype=bool)
    for r, date in enumerate(dates):
        for col, val in cells[date].items():
            spreads[r, col] = val
            mask[r, col] = True
    return ObservationPanel(dates, maturities, boundaries, spreads, mask, dt)


def save_panel(panel: ObservationPanel, path, footer: str | None = None) -> None:
    """Write the long-format CSV; masked entries become empty spread fields."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "maturity_years", "tranche_lo", "tranche_hi",
                         "zero_spread"])
        n_i = panel.n_maturities
        for r, date in enumerate(panel.dates):
            for j in range(panel.n_tranches):
                for i in range(n_i):
                    col = panel.column(i, j)
                    spread = (
                        repr(float(panel.spreads[r, col])) if panel.mask[r, col] else ""
                    )
                    writer.writerow([
                        date,
                        repr(float(panel.maturities[i])),
                        repr(float(panel.boundaries[j])),
                        repr(float(panel.boundaries[j + 1])),
                        spread,
                    ])
        if footer:
            fh.write(f"# {footer}\n")
