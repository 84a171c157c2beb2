"""Message records for the simulated client/server wire.

The simulator holds all objects in one process, so the trace is the
source of truth for what logically crossed the network. Audits assert
on it, e.g. that estimation replies carry nothing but a scalar noise
level.
"""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    kind: str
    payload: dict = field(default_factory=dict)


def client_name(client_id: int) -> str:
    return f"client:{client_id}"
