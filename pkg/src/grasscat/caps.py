"""Enumeration caps.

Several operations enumerate discrete state spaces whose size grows as a
product of level counts or as 2**q.  Each has a conservative default cap;
the GRASSCAT_CAP environment variable overrides all of them at once.
"""

from __future__ import annotations

import os

ENV_VAR = "GRASSCAT_CAP"

STATE_CAP_DEFAULT = 10**6  # product-of-levels enumerations
BIT_CAP_DEFAULT = 20  # 2**q enumerations (check_p0, mixed normalization, oracle)


def state_cap(override: int | None = None) -> int:
    """Cap on the number of allowed states (product of level counts)."""
    if override is not None:
        return override
    env = os.environ.get(ENV_VAR)
    return int(env) if env else STATE_CAP_DEFAULT


def bit_cap(override: int | None = None) -> int:
    """Cap on the bit dimension q for full 2**q enumerations."""
    if override is not None:
        return override
    env = os.environ.get(ENV_VAR)
    return int(env) if env else BIT_CAP_DEFAULT
