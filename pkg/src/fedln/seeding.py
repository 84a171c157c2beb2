"""Deterministic sub-seed derivation.

Every stochastic component in the simulator draws from a seed derived
from the experiment master seed plus a context path (stage name, round
index, client id). Derivation goes through SHA-256 so streams are
independent, stable across platforms and Python/numpy versions, and
adding a client or round never perturbs another one's draws.
"""

import hashlib

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: int | str) -> int:
    """Map a context path of ints and strings to a 64-bit seed."""
    if not parts:
        raise ValueError("derive_seed needs at least one part")
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("bool is not a valid seed part")
        if isinstance(part, int):
            h.update(b"i")
            h.update((part & _MASK64).to_bytes(8, "little"))
        elif isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s")
            h.update(len(data).to_bytes(4, "little"))
            h.update(data)
        else:
            raise TypeError(f"unsupported seed part type: {type(part).__name__}")
    return int.from_bytes(h.digest()[:8], "little")
