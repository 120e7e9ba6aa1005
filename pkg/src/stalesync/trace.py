"""Event trace records and their line-oriented text export.

One event per line, tab separated, stable field order:

    time<TAB>worker<TAB>kind<TAB>t_p<TAB>decision

`time` uses repr so parsing round-trips exactly. `t_p` is the worker's
push count at the instant of the event. `decision` is `grant`, `defer`,
`grant[i,j,...]` for a granting push that also released deferred workers
i, j, ... (ascending), or `-` for events that carry no decision.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import Timestamp, WorkerId

COMPUTE_DONE = "compute_done"
PUSH_ARRIVE = "push_arrive"
GRANT_DELIVER = "grant_deliver"
PULL_ARRIVE = "pull_arrive"
PULL_RETURN = "pull_return"

EVENT_KINDS = (COMPUTE_DONE, PUSH_ARRIVE, GRANT_DELIVER, PULL_ARRIVE, PULL_RETURN)


@dataclass(frozen=True)
class TraceEntry:
    time: Timestamp
    worker: WorkerId
    kind: str
    count: int
    decision: str = "-"

    def render(self) -> str:
        return f"{self.time!r}\t{self.worker}\t{self.kind}\t{self.count}\t{self.decision}"


def decision_token(granted: bool, released=()) -> str:
    if not granted:
        return "defer"
    if released:
        return "grant[" + ",".join(str(w) for w in released) + "]"
    return "grant"


def released_workers(decision: str) -> tuple[WorkerId, ...]:
    if "[" not in decision:
        return ()
    inner = decision[decision.index("[") + 1:decision.index("]")]
    return tuple(int(tok) for tok in inner.split(",") if tok)


def format_trace(entries) -> str:
    return "".join(entry.render() + "\n" for entry in entries)


def parse_trace(text: str) -> list[TraceEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"line {lineno}: expected 5 tab-separated fields")
        time_s, worker_s, kind, count_s, decision = fields
        if kind not in EVENT_KINDS:
            raise ValueError(f"line {lineno}: unknown event kind {kind!r}")
        entries.append(TraceEntry(float(time_s), int(worker_s), kind,
                                  int(count_s), decision))
    return entries
