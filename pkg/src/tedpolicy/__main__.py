import sys

from tedpolicy.cli import main

sys.exit(main())
