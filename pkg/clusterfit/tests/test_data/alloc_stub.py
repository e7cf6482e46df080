"""Allocates slope * input_bytes + offset bytes after an idle start, then exits."""
import os
import sys
import time

path, slope, offset = sys.argv[1], float(sys.argv[2]), int(sys.argv[3])
time.sleep(float(os.environ.get("STUB_IDLE_S", "1.0")))
size = os.path.getsize(path)
block = b"\x01" * (int(slope * size) + offset)
time.sleep(0.6)
print(f"held {len(block)} bytes")
