import sys

from cycflow.cli import main

sys.exit(main())
