import sys

from iceberg.cli import main

sys.exit(main())
