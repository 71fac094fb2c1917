import sys

from safepg.cli import main

sys.exit(main())
