"""Physical constants shared across the package."""

import math

# Speed of light used for every derived constant (m/s)
SPEED_OF_LIGHT = 2.998e8

LN2 = math.log(2.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0
