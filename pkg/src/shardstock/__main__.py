import sys

from shardstock.cli import main

sys.exit(main())
