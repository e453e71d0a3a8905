"""JSON Lines event log and atomic file output.

Record types and their fields, in emission order:

==========  ==============================================================
type        fields
==========  ==============================================================
entry       t, vehicle, lane, arrival
exit        t, vehicle, lane, travel_time
incident    t, action (start|end), lane, position_mi
detector    t, interval, samples ([station, lane, U|null, Q] per sample)
network     t, interval, mph (null if the road was empty), measured
decision    t, gantry, states, source            (displayed state change)
attack      t, event (scheduled|applied), point, window, [gantry], before, after
alert       t, gantry, atm_states, mon_states, differing_lanes, action
override    t, gantry, stage (A/B|C), atm_states, displayed, source
==========  ==============================================================

Every record starts with ``t`` (seconds) then ``type``. Keys are written in
the order above and floats with ``repr`` precision, so two runs with the
same configuration and seed produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    atomic_write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
