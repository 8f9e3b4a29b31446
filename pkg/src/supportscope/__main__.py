import sys

from supportscope.cli import main

sys.exit(main())
