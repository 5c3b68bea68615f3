import sys

from fanfront.tests import run_tests

sys.exit(1 if run_tests() else 0)
