import sys

from fanfront.cli import main

sys.exit(main())
