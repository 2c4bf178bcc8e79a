"""Dataset ingestion, transformations, and the synthetic-data generator."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .model import ModelSpec, ParameterDraw, assemble_structural


class IngestError(ValueError):
    """Raw data could not be aligned or transformed."""


@dataclass(frozen=True)
class Dataset:
    """Quarterly estimation sample.

    g is 100*log real GDP, pi is annualized log deflator growth, r the
    interest rate in percent and m the external instrument.  transform_log
    records which transformations have been applied so that they are never
    applied twice.
    """

    dates: tuple[str, ...]
    g: np.ndarray
    pi: np.ndarray
    r: np.ndarray
    m: np.ndarray
    transform_log: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("g", "pi", "r", "m"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != (len(self.dates),):
                raise IngestError(f"series {name} does not match the date index")
            if np.any(~np.isfinite(arr)):
                raise IngestError(f"series {name} contains missing values")
        object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))

    @property
    def T(self) -> int:
        return len(self.dates)

    def to_matrix(self) -> np.ndarray:
        return np.column_stack([self.g, self.pi, self.r, self.m])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("date,g,pi,r,m\n")
            for i, d in enumerate(self.dates):
                row = ",".join(f"{v:.17g}" for v in
                               (self.g[i], self.pi[i], self.r[i], self.m[i]))
                fh.write(f"{d},{row}\n")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        df = pd.read_csv(path)
        expected = ["date", "g", "pi", "r", "m"]
        if list(df.columns) != expected:
            raise IngestError(f"wide data file must have columns {expected}")
        return cls(dates=tuple(df["date"].astype(str)),
                   g=df["g"].to_numpy(), pi=df["pi"].to_numpy(),
                   r=df["r"].to_numpy(), m=df["m"].to_numpy(),
                   transform_log=("loaded pre-transformed wide file",))


def _read_series(path, value_col: str | None = None) -> pd.Series:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path)
    if "date" not in df.columns:
        raise IngestError(f"{path}: missing 'date' column")
    col = value_col or ("value" if "value" in df.columns else df.columns[1])
    if col not in df.columns:
        raise IngestError(f"{path}: missing value column '{col}'")
    vals = pd.to_numeric(df[col], errors="coerce")
    if vals.isna().any():
        bad = df.loc[vals.isna(), "date"].iloc[0]
        raise IngestError(f"{path}: non-numeric value at {bad}")
    try:
        idx = pd.to_datetime(df["date"], format="ISO8601")
    except ValueError as exc:
        raise IngestError(f"{path}: dates must be ISO formatted: {exc}") from exc
    return pd.Series(vals.to_numpy(), index=idx).sort_index()


def _monthly_to_quarterly(s: pd.Series, name: str) -> pd.Series:
    """Average the three monthly observations of each quarter.

    Partial quarters at the edges are dropped; a partial quarter in the
    interior of the sample is an alignment error.
    """
    q = s.index.to_period("Q")
    counts = s.groupby(q).size()
    means = s.groupby(q).mean()
    full = counts == 3
    if not full.any():
        raise IngestError(f"{name}: no complete quarter in the monthly series")
    first, last = np.nonzero(full.to_numpy())[0][[0, -1]]
    interior = counts.iloc[first:last + 1]
    if (interior != 3).any():
        bad = interior.index[interior != 3][0]
        raise IngestError(f"{name}: quarter {bad} has {interior[bad]} monthly "
                          "observations instead of 3")
    return means.iloc[first:last + 1]


def _quarterly(s: pd.Series) -> pd.Series:
    out = pd.Series(s.to_numpy(), index=s.index.to_period("Q"))
    if out.index.has_duplicates:
        raise IngestError("duplicate quarters in quarterly series")
    return out


def ingest(files: dict, columns: dict | None = None, *,
           use_shadow_rate: bool = False, elb_threshold: float = 0.25,
           sample_start: str | None = None,
           sample_end: str | None = None) -> Dataset:
    """Build the estimation sample from raw CSV files.

    files maps series names to CSV paths: 'gdp' and 'deflator' are quarterly
    levels, 'rate' and 'instrument' (and optionally 'shadow_rate') monthly.
    columns optionally maps a series name to its value-column name.
    """
    columns = columns or {}
    needed = {"gdp", "deflator", "rate", "instrument"}
    missing = needed - files.keys()
    if missing:
        raise IngestError(f"missing input series: {sorted(missing)}")
    if use_shadow_rate and "shadow_rate" not in files:
        raise IngestError("use_shadow_rate requires a 'shadow_rate' file")

    gdp = _quarterly(_read_series(files["gdp"], columns.get("gdp")))
    deflator = _quarterly(_read_series(files["deflator"], columns.get("deflator")))
    rate = _monthly_to_quarterly(
        _read_series(files["rate"], columns.get("rate")), "rate")
    instrument = _monthly_to_quarterly(
        _read_series(files["instrument"], columns.get("instrument")), "instrument")

    log = ["g = 100*log(gdp)", "pi = 400*dlog(deflator)",
           "rate, instrument averaged monthly->quarterly"]
    g = 100.0 * np.log(gdp)
    # the first deflator level is consumed by the difference
    pi = 400.0 * np.log(deflator / deflator.shift(1)).iloc[1:]

    r = rate
    if use_shadow_rate:
        shadow = _monthly_to_quarterly(
            _read_series(files["shadow_rate"], columns.get("shadow_rate")),
            "shadow_rate")
        joined = pd.concat([rate, shadow], axis=1, keys=["rate", "shadow"])
        joined = joined.dropna()
        at_elb = joined["rate"] <= elb_threshold
        r = joined["rate"].where(~at_elb, joined["shadow"])
        log.append(f"r spliced with shadow rate when policy rate <= {elb_threshold}")

    frame = pd.concat([g, pi, r, instrument], axis=1,
                      keys=["g", "pi", "r", "m"]).dropna()
    if sample_start is not None:
        frame = frame[frame.index >= pd.Period(sample_start, freq="Q")]
    if sample_end is not None:
        frame = frame[frame.index <= pd.Period(sample_end, freq="Q")]
    if frame.empty:
        raise IngestError("no overlapping quarters after alignment")
    return Dataset(dates=tuple(str(ix) for ix in frame.index),
                   g=frame["g"].to_numpy(), pi=frame["pi"].to_numpy(),
                   r=frame["r"].to_numpy(), m=frame["m"].to_numpy(),
                   transform_log=tuple(log))


def _synthetic_dates(T: int, start: str = "1990Q1") -> tuple[str, ...]:
    start_p = pd.Period(start, freq="Q")
    return tuple(str(start_p + i) for i in range(T))


def simulate_dgp(spec: ModelSpec, params: ParameterDraw, T: int,
                 rng: np.random.Generator, taubar0: np.ndarray | None = None
                 ) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Simulate observables, the true state path and true structural shocks.

    taubar0 defaults to a draw from its prior.  Returns (dataset, tau, shocks)
    with tau stacked as (taubar0, tau_1, ..., tau_T) and shocks of shape
    (T, 7), the last column being the instrument noise.
    """
    mats = assemble_structural(spec, params)
    p = mats.A_tilde.shape[0]
    if taubar0 is None:
        taubar0 = rng.multivariate_normal(spec.prior.tau00_mean,
                                          spec.prior.V_tau00)
    taubar0 = np.asarray(taubar0, dtype=float)
    shocks = rng.standard_normal((T, 7))

    eta = np.zeros((T + p, 7))
    eta[p - 1, 0:3] = [taubar0[1], taubar0[2], taubar0[3]]
    if p >= 2:
        eta[p - 2, 0] = taubar0[0]
    for t in range(T):
        row = p + t
        acc = mats.B_tilde @ shocks[t]
        for i in range(1, p + 1):
            acc += mats.A_tilde[i - 1] @ eta[row - i]
        eta[row] = acc

    tau_t = eta[p:, 0:3]
    c = eta[p:, 3:6]
    g = tau_t[:, 0] + c[:, 0]
    pi = tau_t[:, 1] + c[:, 1]
    r = tau_t[:, 1] + tau_t[:, 2] + c[:, 2]
    m = eta[p:, 6]
    ds = Dataset(dates=_synthetic_dates(T), g=g, pi=pi, r=r, m=m,
                 transform_log=("simulated",))
    tau = np.concatenate([taubar0, tau_t.ravel()])
    return ds, tau, shocks
