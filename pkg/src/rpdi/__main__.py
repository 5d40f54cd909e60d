import sys

from rpdi.cli import main

sys.exit(main())
