import subprocess
import sys

CASES = [("0", 10), ("2", 30), ("4", 50)]

failures = []
for arg, want in CASES:
    out = subprocess.run(["./task", arg], capture_output=True, text=True, timeout=10).stdout.strip()
    if out != str(want):
        failures.append(f"get_item(items, 5, {arg}): expected {want}, got {out!r}")

for f in failures:
    print(f)
sys.exit(1 if failures else 0)
