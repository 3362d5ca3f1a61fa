import sys

from cdnarms.cli import main

sys.exit(main())
