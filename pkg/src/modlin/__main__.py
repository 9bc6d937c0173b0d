import sys

from modlin.harness.cli import main

sys.exit(main())
