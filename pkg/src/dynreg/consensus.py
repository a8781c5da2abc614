"""Per-configuration consensus instances, managed by the simulation kernel.

Consensus is treated as an oracle object rather than a message protocol. An
instance accepts one proposal per member, refuses to decide before a majority
of its configuration has proposed, and once decided never changes its value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from .core import Configuration, ProcessId, Request

Key = Tuple[Configuration, int]


class ConsensusError(RuntimeError):
    pass


@dataclass
class ConsensusInstance:
    key: Key
    proposals: Dict[ProcessId, Request] = field(default_factory=dict)
    #: proposal fixed when the majority gate was first met; decided later
    chosen: Optional[Request] = None
    gate_at: Optional[int] = None
    decision: Optional[Request] = None
    decided_at: Optional[int] = None
    #: replica state every proposer held (identical for equal ts); the decision applies to it
    pre_state: Any = None

    @property
    def cng(self) -> Configuration:
        return self.key[0]

    @property
    def ts(self) -> int:
        return self.key[1]

    @property
    def decided(self) -> bool:
        return self.decision is not None

    def gate_met(self) -> bool:
        voters = sum(1 for p in self.proposals if p in self.cng.mem)
        return voters >= self.cng.majority()

    def propose(self, proposer: ProcessId, req: Request, now: int) -> bool:
        """Record a proposal. Returns True when this call satisfied the majority gate."""
        if proposer not in self.cng.mem:
            raise ConsensusError(f"p{proposer} is not a member of instance ts={self.ts}")
        if proposer in self.proposals:
            raise ConsensusError(f"p{proposer} proposed twice in instance ts={self.ts}")
        self.proposals[proposer] = req
        if self.chosen is None and self.gate_met():
            self.chosen = self.proposals[min(self.proposals)]
            self.gate_at = now
            return True
        return False

    def decide(self, now: int) -> Request:
        if self.chosen is None:
            raise ConsensusError(f"instance ts={self.ts} cannot decide before a majority proposes")
        if self.decision is None:
            self.decision = self.chosen
            self.decided_at = now
        return self.decision

    def decision_of(self) -> Optional[Request]:
        return self.decision
