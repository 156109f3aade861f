import sys

from fdmc.cli import main

sys.exit(main())
