"""Variance-stabilizing transform for count-valued streams.

Independent Poisson counts y map to x = 2 * sqrt(y + 3/8), which is
approximately Gaussian with unit variance for moderate rates, making
count features usable under the Gaussian mixture model.
"""

import numpy as np


def anscombe(y):
    """Elementwise 2 * sqrt(y + 3/8) for non-negative integer counts."""
    y = np.asarray(y, dtype=np.float64)
    if y.size and y.min() < 0:
        raise ValueError("counts must be non-negative")
    if not np.allclose(y, np.round(y), atol=1e-8):
        raise ValueError("counts must be integer-valued")
    return 2.0 * np.sqrt(y + 0.375)
