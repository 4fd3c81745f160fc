import sys

from prevalest.cli import main

sys.exit(main())
