"""Small argument checks shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

from .dataset import LabeledImage


def check_unit_interval(value, name: str, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if not isinstance(value, numbers.Real) or not 0.0 <= float(value) <= 1.0:
        raise ValueError(f"{name} must be a number in [0, 1], got {value!r}")
    return float(value)


def check_seed(value, name: str = "seed") -> int:
    if not isinstance(value, numbers.Integral) or not 0 <= int(value) < 2**64:
        raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")
    return int(value)


def check_images(images, name: str = "X") -> list[LabeledImage]:
    images = list(images)
    bad = [type(i).__name__ for i in images if not isinstance(i, LabeledImage)]
    if bad:
        raise TypeError(f"{name} must contain LabeledImage objects, found {sorted(set(bad))}")
    return images


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        from sklearn.exceptions import NotFittedError

        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. Call 'fit' before using it."
        )
