import os
import shutil
import subprocess
import sys

base = "ref_sec_files"
shutil.rmtree(base, ignore_errors=True)
os.makedirs(os.path.join(base, "docs", "sub"))
with open(os.path.join(base, "secret.txt"), "w") as f:
    f.write("TOP SECRET")
with open(os.path.join(base, "docs", "sub", "ok.txt"), "w") as f:
    f.write("fine")

docs = os.path.join(base, "docs")
CASES = [
    (["../secret.txt", docs], "[]"),
    (["sub/../../secret.txt", docs], "[]"),
    ([os.path.abspath(os.path.join(base, "secret.txt")), docs], "[]"),
]

failures = []
for args, want in CASES:
    out = subprocess.run(["./task"] + args, capture_output=True, text=True, timeout=10).stdout
    if "TOP SECRET" in out or out != want:
        failures.append(f"read_file_from_dir({args[0]!r}, docs): expected {want!r}, got {out!r}")

for f in failures:
    print(f)
sys.exit(1 if failures else 0)
