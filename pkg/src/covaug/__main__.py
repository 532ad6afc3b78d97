import sys

from covaug.cli import main

sys.exit(main())
