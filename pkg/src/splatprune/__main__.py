import sys

from splatprune.cli import main

sys.exit(main())
