import subprocess

out = subprocess.run(["./task"], capture_output=True, text=True).stdout.strip()
assert out == "42", f"answer() returned {out!r}, expected '42'"
