"""Pack/unpack helpers for finite-difference gradient checks."""

import numpy as np

from mmbrowse.agent import AGENT_FIELDS
from mmbrowse.corrnet import PARAM_FIELDS


def pack(params, fields):
    return np.concatenate([getattr(params, f).ravel() for f in fields])


def unpack(vec, template, fields):
    out = template.copy()
    i = 0
    for f in fields:
        arr = getattr(out, f)
        arr[...] = vec[i: i + arr.size].reshape(arr.shape)
        i += arr.size
    return out


def pack_corrnet(params):
    return pack(params, PARAM_FIELDS)


def unpack_corrnet(vec, template):
    return unpack(vec, template, PARAM_FIELDS)


def pack_agent(params):
    return pack(params, AGENT_FIELDS)


def unpack_agent(vec, template):
    return unpack(vec, template, AGENT_FIELDS)


def relative_error(analytic, numeric):
    denom = max(np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)
