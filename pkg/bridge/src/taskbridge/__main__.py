import sys

from taskbridge.worker import main

sys.exit(main())
