import sys

from ledmarker.cli import main

sys.exit(main())
