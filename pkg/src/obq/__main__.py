import sys

from obq.cli import main

sys.exit(main())
