from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum


class MessageKind(str, Enum):
    PROBE = "Probe"
    INDEX_LIST = "IndexList"
    COMPRESSED_KEY_WITH_MAC = "CompressedKeyWithMac"
    CONFIRM = "Confirm"
    ABORT = "Abort"


@dataclass(frozen=True)
class ProtocolMessage:
    kind: MessageKind
    session_id: bytes
    sequence_no: int
    payload: bytes
    sender: str = "alice"
    time_ms: float = 0.0

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.payload).hexdigest()[:16]


@dataclass
class SessionTranscript:
    """Ordered public messages plus timing and per-stage key snapshots."""

    session_id: bytes
    messages: list = field(default_factory=list)
    probe_times_ms: list = field(default_factory=list)
    end_ms: float = 0.0
    final_key_bits: int = 0
    stage_keys: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def record(self, msg: ProtocolMessage) -> None:
        self.messages.append(msg)

    def note(self, text: str) -> None:
        self.events.append(text)

    def to_jsonl(self) -> str:
        """One JSON object per message: session_id, seq, kind, payload digest, model time."""
        lines = [json.dumps({"session_id": m.session_id.hex(), "seq": m.sequence_no,
                             "kind": m.kind.value, "sender": m.sender, "digest": m.digest,
                             "time_ms": round(m.time_ms, 3)}, sort_keys=True)
                 for m in self.messages]
        return "\n".join(lines) + ("\n" if lines else "")
