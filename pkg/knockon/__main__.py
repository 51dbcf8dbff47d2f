import sys

from knockon.runner import main

sys.exit(main())
