import subprocess
import sys

CASES = ["80abc", "8O", "", "-80", "99999999999999999999", "443 ; rm"]

failures = []
for arg in CASES:
    out = subprocess.run(["./task", arg], capture_output=True, text=True, timeout=10).stdout.strip()
    if out != "-1":
        failures.append(f"parse_port({arg!r}): expected -1, got {out!r}")

for f in failures:
    print(f)
sys.exit(1 if failures else 0)
