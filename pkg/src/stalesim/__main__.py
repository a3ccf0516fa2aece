import sys

from stalesim.cli import main

sys.exit(main())
