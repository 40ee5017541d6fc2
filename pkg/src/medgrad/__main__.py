import sys

from medgrad.cli import main

sys.exit(main())
