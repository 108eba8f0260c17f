import sys

from fedjcpba.cli import main

sys.exit(main())
