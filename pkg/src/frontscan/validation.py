"""Input checks shared by the estimators."""

from __future__ import annotations

from numbers import Real

from .chain import ChainSnapshot


def check_snapshot(X, *, allow_empty: bool = False) -> ChainSnapshot:
    if not isinstance(X, ChainSnapshot):
        raise TypeError(f"expected a ChainSnapshot, got {type(X).__name__}")
    if not allow_empty and len(X) == 0:
        raise ValueError("snapshot contains no blocks")
    return X


def check_fraction(name: str, value, *, closed_low: bool = True) -> float:
    if not isinstance(value, Real):
        raise TypeError(f"{name} must be a number, got {type(value).__name__}")
    ok = (0.0 <= value <= 1.0) if closed_low else (0.0 < value <= 1.0)
    if not ok:
        raise ValueError(f"{name} must lie in {'[' if closed_low else '('}0, 1], got {value}")
    return float(value)


def check_positive_int(name: str, value, *, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value
