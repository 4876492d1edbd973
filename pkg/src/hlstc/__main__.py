import sys

from hlstc.cli import main

sys.exit(main())
