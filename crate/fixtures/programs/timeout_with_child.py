# The child inherits stdout, so the executor must kill the whole group.
import subprocess
import sys
import time

subprocess.Popen([sys.executable, "-c", "import time\nwhile True: time.sleep(0.05)"])
while True:
    time.sleep(0.05)
