import sys

from cleargate.cli import main

sys.exit(main())
