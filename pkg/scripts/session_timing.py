"""Simulated per-stream throughput and latency versus participant count and render units.

    python3 scripts/session_timing.py --participants 2 3 4 --units 1 2 3
"""

import argparse
import csv
import sys

from vcube.assembly import AssemblyLayout
from vcube.session.schedule import StageModel, schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--participants", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--units", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--render-ms", type=float, default=40.0)
    ap.add_argument("--duration", type=float, default=10.0)
    args = ap.parse_args()

    writer = csv.writer(sys.stdout)
    writer.writerow(["participants", "render_units", "ceiling_fps", "min_fps", "mean_latency_ms", "dropped"])
    for n in args.participants:
        layout = AssemblyLayout.face_to_face() if n == 2 else AssemblyLayout.round_table(n)
        for units in args.units:
            stages = StageModel(render=args.render_ms, render_units=units)
            trace = schedule(layout, stages, args.duration)
            fps = min(trace.fps(s) for s in trace.streams())
            writer.writerow([n, units, f"{stages.ceiling_fps(n - 1):.2f}", f"{fps:.2f}",
                             f"{trace.latencies().mean():.1f}", len(trace.dropped())])


if __name__ == "__main__":
    main()
