"""Named parameter sets tied to an architecture fingerprint."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import CompatibilityError
from .tensor import DTYPE


def param_checksum(values):
    """sha256 over names, shapes, and little-endian float64 bytes."""
    digest = hashlib.sha256()
    for name in sorted(values):
        arr = np.ascontiguousarray(values[name], dtype="<f8")
        digest.update(name.encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


class ModelParameters:
    """Immutable-by-convention map of parameter name -> float64 array.

    The fingerprint pins the architecture the values were trained for; two
    parameter sets are averageable only when fingerprints, names, and shapes
    all agree. metadata carries seed, schedule, and a provenance tag
    (seed | adapted | averaged) plus whatever the producing run logged.
    """

    def __init__(self, values, fingerprint, metadata=None):
        self.values = {name: np.array(arr, dtype=DTYPE) for name, arr in values.items()}
        self.fingerprint = str(fingerprint)
        self.metadata = dict(metadata or {})

    def copy(self):
        return ModelParameters(self.values, self.fingerprint, self.metadata)

    def check_averageable(self, other):
        if self.fingerprint != other.fingerprint:
            raise CompatibilityError(
                f"fingerprint mismatch: {self.fingerprint[:12]} vs {other.fingerprint[:12]}")
        if set(self.values) != set(other.values):
            raise CompatibilityError("parameter name sets differ")
        for name, arr in self.values.items():
            if arr.shape != other.values[name].shape:
                raise CompatibilityError(f"shape mismatch on {name}")

    def load_into(self, network):
        """Copy values into a live network (shapes must line up)."""
        live = network.params()
        if set(live) != set(self.values):
            raise CompatibilityError("parameter names do not match the network")
        for name, arr in live.items():
            src = self.values[name]
            if src.shape != arr.shape:
                raise CompatibilityError(f"shape mismatch on {name}")
            np.copyto(arr, src)

    def checksum(self):
        return param_checksum(self.values)

    @classmethod
    def from_network(cls, network, metadata=None):
        return cls(network.params(), network.spec.fingerprint(), metadata)
