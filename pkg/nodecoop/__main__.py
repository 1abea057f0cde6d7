import sys

from nodecoop.cli import main

sys.exit(main())
