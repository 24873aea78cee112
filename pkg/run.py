#!/usr/bin/env python
"""
Run the cvarmdp command-line interface
"""
import sys

from cvarmdp.cli import main


if __name__ == "__main__":
    sys.exit(main())
