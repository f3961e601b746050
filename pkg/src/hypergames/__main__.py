import sys

from hypergames.cli import main

sys.exit(main())
