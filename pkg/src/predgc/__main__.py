import sys

from predgc.cli import main

sys.exit(main())
