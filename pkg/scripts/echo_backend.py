#!/usr/bin/env python3
"""Reference child for the subprocess backend: answers with the last user message.

    --exit-after N   exit without answering the (N+1)-th request
    --malformed      answer with a line that is not JSON
    --error MSG      answer every request with {"error": MSG}
    --obey           answer with about as many characters as the first number in the
                     first user message; overshoots by 30% at turn 1 and less after feedback
"""

import argparse
import json
import re
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--exit-after", type=int, default=None)
    ap.add_argument("--malformed", action="store_true")
    ap.add_argument("--error", default=None)
    ap.add_argument("--obey", action="store_true")
    args = ap.parse_args()
    served = 0
    for line in sys.stdin:
        if args.exit_after is not None and served >= args.exit_after:
            print("echo child giving up", file=sys.stderr, flush=True)
            sys.exit(3)
        req = json.loads(line)
        if args.malformed:
            out = "not json at all"
        elif args.error is not None:
            out = json.dumps({"error": args.error})
        else:
            users = [m["text"] for m in req["history"] if m["role"] == "user"]
            found = re.search(r"\d+", users[0]) if args.obey else None
            if found:
                n = round(int(found.group()) * (1 + 0.3 / len(users)))
                out = json.dumps({"text": "x" * n})
            else:
                out = json.dumps({"text": users[-1]})
        sys.stdout.write(out + "\n")
        sys.stdout.flush()
        served += 1


if __name__ == "__main__":
    main()
