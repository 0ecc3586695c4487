"""Regenerate the synthetic fixture files. Output is fully determined by the seeds below."""

import json
import random
from pathlib import Path

HERE = Path(__file__).parent
DAY = 86_400_000
START = 1_577_836_800_000  # 2020-01-01T00:00:00Z


def daily_walk(path: Path, n: int, seed: int) -> None:
    rng = random.Random(seed)
    px = 100.0
    lines = ["timestamp_ms,open,high,low,close,volume"]
    for i in range(n):
        o = round(px * (1 + rng.gauss(0, 0.004)), 2)
        c = round(o * (1 + rng.gauss(0.0003, 0.018)), 2)
        h = round(max(o, c) * (1 + abs(rng.gauss(0, 0.006))), 2)
        l = round(min(o, c) * (1 - abs(rng.gauss(0, 0.006))), 2)
        v = rng.randint(50_000, 500_000)
        lines.append(f"{START + i * DAY},{o},{h},{l},{c},{v}")
        px = c
    path.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    daily_walk(HERE / "daily_1200.csv", 1200, 20240501)
