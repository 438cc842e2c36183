import sys

from opgrpo.cli import main

sys.exit(main())
