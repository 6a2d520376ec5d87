#!/usr/bin/env python3
# Answers the first two requests, then replies with garbage.
import sys

count = 0
for line in sys.stdin:
    count += 1
    sys.stdout.write("0.5\n" if count <= 2 else "not-a-number\n")
    sys.stdout.flush()
