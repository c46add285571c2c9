"""Uniformly gridded complementary-CDF curves and the Kolmogorov metric."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = ["CcdfCurve", "kolmogorov_distance"]

# violations beyond this are treated as caller bugs, below it as round-off
_MONOTONE_SLACK = 5e-9


@dataclass(frozen=True, eq=False)
class CcdfCurve:
    """ccdf values on the grid ``s = 0, h, ..., smax``.

    Values must be nonincreasing and lie in [0, 1] up to round-off; tiny
    violations are clipped on construction, anything larger raises.
    """

    h: float
    values: np.ndarray

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid step h must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("values must be a 1-D array with at least two points")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        if v.max() > 1.0 + _MONOTONE_SLACK or v.min() < -_MONOTONE_SLACK:
            raise ValueError("curve values must lie in [0, 1]")
        rises = np.diff(v)
        if rises.size and rises.max() > _MONOTONE_SLACK:
            raise ValueError(f"ccdf must be nonincreasing (max rise {rises.max():.3g})")
        v = np.minimum.accumulate(np.clip(v, 0.0, 1.0))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def smax(self) -> float:
        return (self.n - 1) * self.h

    @property
    def s_grid(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def interp(self, s):
        """Linear interpolation, 0 beyond the truncation point."""
        return np.interp(s, self.s_grid, self.values, right=0.0)

    def to_csv(self, path_or_buf) -> None:
        """Write ``s,ccdf`` rows with 17 significant digits."""
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            buf = open(path_or_buf, "w")
            close = True
        else:
            buf = path_or_buf
        try:
            buf.write("s,ccdf\n")
            for s, v in zip(self.s_grid, self.values):
                buf.write(f"{s:.17g},{v:.17g}\n")
        finally:
            if close:
                buf.close()

    @classmethod
    def from_csv(cls, path_or_buf) -> "CcdfCurve":
        if isinstance(path_or_buf, (str, bytes)):
            with open(path_or_buf) as fh:
                text = fh.read()
        else:
            text = path_or_buf.read()
        rows = [line for line in text.splitlines() if line and not line.startswith("#")]
        if not rows or rows[0].strip() != "s,ccdf":
            raise ValueError("expected a CSV with header 's,ccdf'")
        data = np.loadtxt(io.StringIO("\n".join(rows[1:])), delimiter=",")
        s, v = data[:, 0], data[:, 1]
        steps = np.diff(s)
        h = steps[0]
        if not np.allclose(steps, h, rtol=1e-9, atol=1e-12):
            raise ValueError("curve grid must be uniform")
        return cls(h=h, values=v)


def kolmogorov_distance(a: CcdfCurve, b: CcdfCurve) -> float:
    """Sup distance over the shared grid; the shorter tail is taken as 0.

    Requires matching grid steps.  Identical curves give 0, and the
    distance between the all-ones and all-zeros curves is 1.
    """
    if abs(a.h - b.h) > 1e-12 * max(a.h, b.h):
        raise ValueError(f"grid steps differ: {a.h} vs {b.h}")
    n = max(a.n, b.n)
    va = np.zeros(n)
    vb = np.zeros(n)
    va[: a.n] = a.values
    vb[: b.n] = b.values
    return float(np.abs(va - vb).max())
