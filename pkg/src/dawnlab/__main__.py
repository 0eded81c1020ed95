import sys

from dawnlab.cli import main

sys.exit(main())
