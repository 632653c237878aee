import sys

from neutrabench.harness.cli import main

sys.exit(main())
