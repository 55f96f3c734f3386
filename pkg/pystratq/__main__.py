import sys

from pystratq.cli import main

sys.exit(main())
