import sys

from captrfuse.cli import run

sys.exit(run(sys.argv[1:]))
