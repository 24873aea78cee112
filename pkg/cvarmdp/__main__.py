import sys

from cvarmdp.cli import main

sys.exit(main())
