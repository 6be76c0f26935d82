import sys

from eeks.cli import main

sys.exit(main())
