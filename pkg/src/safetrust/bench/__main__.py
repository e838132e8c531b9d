import sys

from ..cli import bench_main

sys.exit(bench_main())
