import sys

from mfc_lab.cli import main

sys.exit(main())
