"""Stand-in decision provider for tests: NDJSON on stdin/stdout.

Usage: fake_provider.py MODE where MODE is one of
  empty   always answer []
  buy     answer one valid market BUY of 1 lot
  typo    answer with an "ordertype" key
  sleep   never answer the first request, then answer []
  garbage answer a line that is not JSON
  random  answer random (often invalid or oversized) actions, seeded by argv[2]
"""

import json
import random
import sys
import time


def main() -> None:
    mode = sys.argv[1]
    rng = random.Random(int(sys.argv[2]) if len(sys.argv) > 2 else 0)
    first = True
    for line in sys.stdin:
        ctx = json.loads(line)
        if mode == "empty":
            out = []
        elif mode == "buy":
            out = [{"action": "BUY", "orderType": "MARKET", "price": None, "quantity": 1,
                    "explanation": "test buy at " + str(ctx["now"])}]
        elif mode == "typo":
            out = [{"action": "BUY", "ordertype": "MARKET", "price": None, "quantity": 1, "explanation": "x"}]
        elif mode == "sleep":
            if first:
                first = False
                time.sleep(1.5)
            out = []
        elif mode == "garbage":
            sys.stdout.write("not json at all\n")
            sys.stdout.flush()
            continue
        else:
            last = (ctx.get("candle") or {}).get("close") or 100.0
            out = []
            for _ in range(rng.randint(0, 3)):
                kind = rng.choice(["MARKET", "LIMIT", "STOP"])
                out.append({
                    "action": rng.choice(["BUY", "SELL", "SHORT", "SHORT_COVER"]),
                    "orderType": kind,
                    "price": None if kind == "MARKET" else round(last * rng.uniform(0.9, 1.1), 2),
                    "quantity": rng.randint(1, 5000),
                    "explanation": "fuzz",
                })
        sys.stdout.write(json.dumps(out) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
