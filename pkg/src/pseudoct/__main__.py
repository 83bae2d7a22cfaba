"""Module entry point so ``python -m pseudoct`` behaves like the console script."""

import sys

from pseudoct.cli import main

if __name__ == "__main__":
    sys.exit(main())
