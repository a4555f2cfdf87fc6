"""Argument checks shared by the public entry points."""

import math
import numbers


class ConfigError(ValueError):
    """Invalid parameters or an inconsistent combination of them."""


def check_int(value, name, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_open_unit(value, name):
    """Return ``value`` as float, requiring ``0 < value < 1``."""
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a real number, got {value!r}") from None
    if not (0.0 < value < 1.0) or math.isnan(value):
        raise ConfigError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_delta(delta):
    return check_open_unit(delta, "delta")


def check_separation(p):
    return check_open_unit(p, "p")


def check_display_set(items, n_items=None, min_size=2):
    """Normalise ``items`` to a strictly increasing tuple of item ids."""
    try:
        raw = [int(i) for i in items]
    except TypeError:
        raise ConfigError(f"display set must be iterable, got {items!r}") from None
    S = tuple(sorted(raw))
    if len(set(S)) != len(S):
        raise ConfigError(f"display set has duplicate items: {list(items)}")
    if len(S) < min_size:
        raise ConfigError(f"display set needs at least {min_size} items, got {list(S)}")
    if S and S[0] < 0:
        raise ConfigError(f"negative item id in {list(S)}")
    if n_items is not None and S and S[-1] >= n_items:
        raise ConfigError(f"item {S[-1]} out of range for K={n_items}")
    return S


def check_policy_m(M, delta, p, m_formula, n_items):
    """Resolve the threshold ``M`` from either ``M`` or ``(delta, p)``."""
    if M is not None and delta is not None:
        raise ConfigError("give either M or delta, not both")
    if M is not None:
        return check_int(M, "M", minimum=1)
    if delta is None:
        raise ConfigError("one of M or delta is required")
    if p is None:
        raise ConfigError("p is required to derive M from delta")
    return m_formula(delta, n_items, p)
