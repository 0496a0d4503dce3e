import sys

from leamvd.cli import main

sys.exit(main())
