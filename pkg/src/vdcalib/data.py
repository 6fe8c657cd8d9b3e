"""Uniformly sampled time series, CSV I/O, noise injection and alignment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Standard deviation of the white noise added to each measured channel.
DEFAULT_NOISE = {
    "u": 0.1,
    "omega_lf": 1.0, "omega_rf": 1.0,
    "omega_lr": 1.0, "omega_rr": 1.0,
    "v": 0.05,
    "wz": 0.02,
    "phi": 0.005,
    "wx": 0.002,
}


class DataFormatError(ValueError):
    """Malformed time-series file or inconsistent series."""


class TimeSeries:
    """Named channels sampled on a shared, uniform time axis.

    Parameters
    ----------
    t : array_like
        Strictly increasing, uniformly spaced sample times (s).
    channels : dict of str -> array_like
        Channel vectors, each the same length as ``t``.
    meta : dict, optional
        Free-form metadata (``sample_dt``, source, noise seed, ...).
    """

    def __init__(self, t, channels: dict, meta: dict | None = None):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise DataFormatError("time axis must be a non-empty 1-D array")
        if not channels:
            raise DataFormatError("a time series needs at least one channel")
        if t.size > 1:
            dts = np.diff(t)
            if np.any(dts <= 0):
                raise DataFormatError("time axis must be strictly increasing")
            step = (t[-1] - t[0]) / (t.size - 1)
            if np.max(np.abs(dts - step)) > 1e-9 * max(abs(step), 1e-300) + 1e-12 * np.max(np.abs(t)):
                raise DataFormatError("time axis is not uniform")
        chans = {}
        for name, vals in channels.items():
            if name == "t":
                raise DataFormatError("'t' is reserved for the time axis")
            arr = np.asarray(vals, dtype=np.float64)
            if arr.shape != t.shape:
                raise DataFormatError(f"channel {name!r} has length {arr.size}, expected {t.size}")
            chans[name] = arr
        self.t = t
        self.channels = chans
        self.meta = dict(meta or {})

    def __getitem__(self, name) -> np.ndarray:
        if name == "t":
            return self.t
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"no channel {name!r}; available: {sorted(self.channels)}") from None

    def __contains__(self, name):
        return name == "t" or name in self.channels

    def __len__(self):
        return self.t.size

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (np.array_equal(self.t, other.t)
                and list(self.channels) == list(other.channels)
                and all(np.array_equal(self.channels[k], other.channels[k]) for k in self.channels))

    def __repr__(self):
        return f"TimeSeries({len(self)} samples, channels={list(self.channels)})"

    @property
    def names(self):
        return list(self.channels)

    @property
    def sample_dt(self) -> float:
        if self.t.size < 2:
            return float(self.meta.get("sample_dt", 0.0))
        return float((self.t[-1] - self.t[0]) / (self.t.size - 1))

    def select(self, names) -> "TimeSeries":
        return TimeSeries(self.t, {n: self[n] for n in names}, self.meta)

    def window(self, t_start: float, t_end: float, tol: float = 1e-9) -> "TimeSeries":
        keep = (self.t >= t_start - tol) & (self.t <= t_end + tol)
        return TimeSeries(self.t[keep], {k: v[keep] for k, v in self.channels.items()}, self.meta)

    def as_matrix(self, names) -> np.ndarray:
        return np.column_stack([self[n] for n in names])


@dataclass
class NoiseSpec:
    """Per-channel Gaussian noise levels and the generator seed."""

    sigma: dict = field(default_factory=lambda: dict(DEFAULT_NOISE))
    seed: int = 0

    def __post_init__(self):
        for ch, s in self.sigma.items():
            if not (np.isfinite(s) and s >= 0):
                raise ValueError(f"noise sigma for {ch!r} must be >= 0, got {s!r}")


def add_gaussian_noise(series: TimeSeries, spec: NoiseSpec) -> TimeSeries:
    """Add i.i.d. zero-mean Gaussian noise to the channels listed in ``spec``.

    Channels are processed in the order of ``spec.sigma`` from a single
    seeded generator, so the result is reproducible for a given seed.
    """
    missing = [ch for ch in spec.sigma if ch not in series.channels]
    if missing:
        raise KeyError(f"noise spec names unknown channel(s) {missing}; "
                       f"available: {series.names}")
    rng = np.random.default_rng(spec.seed)
    out = {}
    noisy = {}
    for ch, sigma in spec.sigma.items():
        z = rng.standard_normal(len(series))
        noisy[ch] = series[ch] + sigma * z if sigma > 0 else series[ch].copy()
    for ch in series.names:
        out[ch] = noisy.get(ch, series[ch].copy())
    meta = dict(series.meta)
    meta["noise_seed"] = int(spec.seed)
    meta["noise_sigma"] = {k: float(v) for k, v in spec.sigma.items()}
    return TimeSeries(series.t.copy(), out, meta)


def write_csv(series: TimeSeries, path, meta: dict | None = None) -> Path:
    """Write ``series`` as CSV with ``#`` metadata lines before the header.

    Values use 17 significant digits so that reading the file back gives
    bit-identical floats.
    """
    path = Path(path)
    allmeta = dict(series.meta)
    if meta:
        allmeta.update(meta)
    lines = [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in allmeta.items()]
    lines.append(",".join(["t", *series.names]))
    mat = np.column_stack([series.t, *[series[n] for n in series.names]])
    for row in mat:
        lines.append(",".join(format(float(x), ".17g") for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> TimeSeries:
    path = Path(path)
    meta = {}
    header = None
    rows = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if header is not None:
                    raise DataFormatError(f"{path}:{lineno}: metadata line after header")
                key, _, val = line[1:].strip().partition(":")
                try:
                    meta[key.strip()] = json.loads(val)
                except json.JSONDecodeError:
                    meta[key.strip()] = val.strip()
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                header = cells
                if not header or header[0] != "t":
                    raise DataFormatError(f"{path}:{lineno}: header must start with 't'")
                if len(header) < 2:
                    raise DataFormatError(f"{path}:{lineno}: no data channels in header")
                continue
            if len(cells) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: row has {len(cells)} cells, header has {len(header)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell") from None
    if header is None:
        raise DataFormatError(f"{path}: missing header row")
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    mat = np.array(rows)
    try:
        return TimeSeries(mat[:, 0], {n: mat[:, j + 1] for j, n in enumerate(header[1:])}, meta)
    except DataFormatError as err:
        raise DataFormatError(f"{path}: {err}") from None


def align(model: TimeSeries, data: TimeSeries, channels, tol: float = 1e-9) -> np.ndarray:
    """Residuals model - data at the data sample times.

    Every data time must coincide (within ``tol`` seconds) with a model
    sample; no interpolation is performed. Returns an array of shape
    ``(len(channels), len(data))``.
    """
    for ch in channels:
        if ch not in model.channels or ch not in data.channels:
            raise KeyError(f"channel {ch!r} missing from model or data")
    if len(model) > 1:
        step = model.sample_dt
        pos = (data.t - model.t[0]) / step
        idx = np.rint(pos).astype(np.int64)
    else:
        idx = np.zeros(len(data), dtype=np.int64)
    valid = (idx >= 0) & (idx < len(model))
    idx_c = np.clip(idx, 0, len(model) - 1)
    bad = ~valid | (np.abs(model.t[idx_c] - data.t) > tol)
    if np.any(bad):
        first = data.t[np.argmax(bad)]
        raise ValueError(f"data time {first!r} s has no matching model sample")
    return np.vstack([model[ch][idx_c] - data[ch] for ch in channels])
