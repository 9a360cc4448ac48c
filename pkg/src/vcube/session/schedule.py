"""Discrete-event model of the multi-site capture, render and transport pipeline.

Time is kept as exact ``Fraction`` milliseconds so latency sums and frame
periods never pick up rounding. Events are ordered by ``(time, sequence)``.

Per cube and frame ``k``: acquisition starts at ``k * 1000 / fps`` and lasts
``acquisition`` ms. The finished frame becomes the pending render job of every
outgoing stream (one per remote cube), replacing any older pending job, which
is recorded as dropped. A cube's render units serve the stream that has waited
longest since its last render started (ties by receiver id); superseding a job
does not reset that wait, so no stream starves when units are scarce. A rendered portrait is copied and compressed, sent over
the network and decoded and displayed at the receiver; those stages do not
contend for resources. Viewpoints travel on their own channel: the one
tracked from frame ``k`` leaves after acquisition and arrives ``viewpoint_latency``
ms later; renders use the newest viewpoint that has arrived.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from ..assembly import AssemblyLayout, validate_layout
from ..errors import InsufficientData, InvalidLayout

STAGES = ("acquire", "render", "compress", "network", "display")


@dataclass(frozen=True)
class StageModel:
    acquisition: float = 60.0
    render: float = 40.0
    compress: float = 30.0
    network: float = 100.0
    display: float = 40.0
    render_units: int = 2
    fps: float = 30.0
    viewpoint_latency: float = 100.0

    def __post_init__(self):
        for name in ("acquisition", "render", "compress", "network", "display", "viewpoint_latency"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} latency must be >= 0")
        if self.render_units < 1:
            raise ValueError("need at least one render unit")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def total_latency(self) -> float:
        return self.acquisition + self.render + self.compress + self.network + self.display

    def ceiling_fps(self, remote_views: int) -> float:
        """Upper bound on per-stream throughput."""
        if self.render == 0 or remote_views == 0:
            return self.fps
        return min(self.fps, self.render_units * 1000.0 / (self.render * remote_views))


@dataclass
class FrameRecord:
    sender: int
    receiver: int
    frame: int
    acquire: tuple  # (enter, exit) ms as exact Fractions
    render: tuple | None = None
    compress: tuple | None = None
    network: tuple | None = None
    display: tuple | None = None
    dropped: bool = False
    drop_reason: str = ""
    viewpoint_frame: int = -1  # frame index of the viewpoint used (-1 = none received yet)
    render_unit: int = -1
    encoded_bytes: int = 0

    @property
    def latency(self) -> float | None:
        if self.display is None:
            return None
        return float(self.display[1] - self.acquire[0])

    def stage_times(self) -> list[tuple[str, float, float]]:
        out = []
        for name in STAGES:
            span = getattr(self, name)
            if span is not None:
                out.append((name, _ms(span[0]), _ms(span[1])))
        return out


def _ms(x: Fraction) -> float:
    return float(x)


@dataclass
class SessionTrace:
    records: list[FrameRecord]
    duration_ms: float
    stages: StageModel
    cube_ids: list[int] = field(default_factory=list)

    def streams(self) -> list[tuple[int, int]]:
        return sorted({(r.sender, r.receiver) for r in self.records})

    def completed(self, stream=None) -> list[FrameRecord]:
        return [r for r in self.records if r.display is not None and (stream is None or (r.sender, r.receiver) == stream)]

    def dropped(self) -> list[FrameRecord]:
        return [r for r in self.records if r.dropped]

    def steady(self, stream, warmup_ms: float = 1000.0) -> list[FrameRecord]:
        return [r for r in self.completed(stream) if r.acquire[0] >= warmup_ms]

    def fps(self, stream, warmup_ms: float = 1000.0) -> float:
        """Displayed frames per second after warm-up: ``(n - 1) / span`` of display times."""
        done = sorted(r.display[1] for r in self.steady(stream, warmup_ms))
        if len(done) < 2:
            raise InsufficientData(f"stream {stream}: {len(done)} displayed frames after warm-up")
        return float((len(done) - 1) * 1000 / (done[-1] - done[0]))

    def latencies(self, stream=None, warmup_ms: float = 1000.0) -> np.ndarray:
        streams = [stream] if stream is not None else self.streams()
        return np.array([r.latency for s in streams for r in self.steady(s, warmup_ms)])

    def summary(self, warmup_ms: float = 1000.0) -> dict:
        out = {"duration_ms": self.duration_ms, "stage_latency_sum_ms": self.stages.total_latency,
               "records": len(self.records), "dropped": len(self.dropped()), "streams": {}}
        for s in self.streams():
            lat = self.latencies(s, warmup_ms)
            key = f"{s[0]}->{s[1]}"
            entry = {"completed": len(self.completed(s)),
                     "dropped": sum(1 for r in self.records if (r.sender, r.receiver) == s and r.dropped)}
            try:
                entry["fps"] = self.fps(s, warmup_ms)
            except InsufficientData:
                entry["fps"] = None
            if lat.size:
                entry["latency_ms"] = {"mean": float(lat.mean()), "p50": float(np.percentile(lat, 50)),
                                       "p95": float(np.percentile(lat, 95)), "max": float(lat.max())}
            try:
                entry["bitrate_bps"] = bitrate(self)[s]
            except InsufficientData:
                entry["bitrate_bps"] = None
            out["streams"][key] = entry
        return out

    def events(self):
        """One dict per stage boundary pair, in record order."""
        for r in self.records:
            for name, t0, t1 in r.stage_times():
                yield {"sender": r.sender, "receiver": r.receiver, "frame": r.frame, "stage": name,
                       "enter_ms": t0, "exit_ms": t1}
            if r.dropped:
                yield {"sender": r.sender, "receiver": r.receiver, "frame": r.frame, "stage": "dropped",
                       "reason": r.drop_reason}
            elif r.display is not None:
                yield {"sender": r.sender, "receiver": r.receiver, "frame": r.frame, "stage": "done",
                       "viewpoint_frame": r.viewpoint_frame, "render_unit": r.render_unit,
                       "encoded_bytes": r.encoded_bytes}

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.events():
                fh.write(json.dumps(ev, sort_keys=True) + "\n")

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def bitrate(trace: SessionTrace, warmup_ms: float = 0.0) -> dict:
    """Encoded payload bits per second for every stream over the trace duration."""
    if trace.duration_ms <= 0 or not trace.completed():
        raise InsufficientData("trace has no completed frames")
    seconds = trace.duration_ms / 1000.0
    out = {}
    for s in trace.streams():
        bits = 8 * sum(r.encoded_bytes for r in trace.completed(s))
        out[s] = bits / seconds
    return out


def schedule(layout: AssemblyLayout, stages: StageModel = StageModel(), duration_s: float = 10.0,
             frame_bytes: Callable[[int, int, int], int] | int = 0) -> SessionTrace:
    """Simulate every (sender, receiver) stream of ``layout`` for ``duration_s`` seconds.

    Frames are acquired in ``[0, duration)``; the simulation then drains so each
    acquired frame ends up displayed or dropped. ``frame_bytes`` is either a
    constant or ``f(sender, receiver, frame)`` giving the encoded size.
    """
    if validate_layout(layout):
        raise InvalidLayout("; ".join(v.detail for v in validate_layout(layout)))
    ids = sorted(layout.ids)
    if len(ids) < 2:
        raise InvalidLayout("a session needs at least two cubes")
    size_of = frame_bytes if callable(frame_bytes) else (lambda s, r, k, _n=int(frame_bytes): _n)

    F = lambda x: Fraction(x).limit_denominator(10**9)  # noqa: E731
    period = Fraction(1000) / F(stages.fps)
    acq, ren, cmp_, net, dsp = (F(getattr(stages, n)) for n in ("acquisition", "render", "compress", "network", "display"))
    vlat = F(stages.viewpoint_latency)
    end = F(duration_s) * 1000
    n_frames = int(end / period) if end > 0 else 0
    if n_frames * period < end:
        n_frames += 1

    queue: list = []
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(queue, (t, seq, kind, payload))
        seq += 1

    records: list[FrameRecord] = []
    pending: dict[tuple[int, int], FrameRecord] = {}
    waiting_since: dict[tuple[int, int], Fraction] = {}  # when the stream's current wait began
    free_units = {c: list(range(stages.render_units)) for c in ids}
    latest_vp = {(c, r): -1 for c in ids for r in ids if r != c}  # viewpoint of r known at c

    for k in range(n_frames):
        for c in ids:
            push(k * period, "acquire", (c, k))

    def dispatch(c, now):
        while free_units[c]:
            waiting = [(waiting_since[key], rec.receiver, key) for key, rec in pending.items() if key[0] == c]
            if not waiting:
                return
            _, _, key = min(waiting)
            rec = pending.pop(key)
            del waiting_since[key]
            unit = free_units[c].pop(0)
            rec.render = (now, now + ren)
            rec.render_unit = unit
            rec.viewpoint_frame = latest_vp[(c, rec.receiver)]
            push(now + ren, "rendered", (rec, unit))

    while queue:
        now, _, kind, payload = heapq.heappop(queue)
        if kind == "acquire":
            c, k = payload
            push(now + acq, "acquired", (c, k, now))
        elif kind == "acquired":
            c, k, t0 = payload
            for r in ids:
                if r == c:
                    continue
                # tracked viewpoint of cube c leaves for every remote cube
                push(now + vlat, "viewpoint", (r, c, k))
            for r in ids:
                if r == c:
                    continue
                rec = FrameRecord(c, r, k, (t0, now))
                records.append(rec)
                old = pending.get((c, r))
                if old is not None:
                    old.dropped, old.drop_reason = True, "superseded before render"
                else:
                    waiting_since[(c, r)] = now
                pending[(c, r)] = rec
            dispatch(c, now)
        elif kind == "viewpoint":
            at, of, k = payload
            latest_vp[(at, of)] = max(latest_vp[(at, of)], k)
        elif kind == "rendered":
            rec, unit = payload
            free_units[rec.sender].append(unit)
            free_units[rec.sender].sort()
            rec.compress = (now, now + cmp_)
            rec.network = (now + cmp_, now + cmp_ + net)
            rec.display = (now + cmp_ + net, now + cmp_ + net + dsp)
            rec.encoded_bytes = int(size_of(rec.sender, rec.receiver, rec.frame))
            dispatch(rec.sender, now)

    records.sort(key=lambda r: (r.acquire[0], r.sender, r.receiver))
    return SessionTrace(records, float(end), stages, ids)
