"""Max-shifted log-sum-exp and softmax.

Local versions instead of scipy's: the inner loops call these on tiny
arrays hundreds of thousands of times, where scipy's dispatch layer
costs two orders of magnitude more than the arithmetic.  Inputs are
finite by construction everywhere in this package.
"""

from __future__ import annotations

import numpy as np


def logsumexp(a, axis=None, keepdims: bool = False):
    a = np.asarray(a, dtype=float)
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    if keepdims:
        return out
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(a, axis=None):
    a = np.asarray(a, dtype=float)
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)
