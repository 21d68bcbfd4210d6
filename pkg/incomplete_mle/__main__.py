import sys

from incomplete_mle.main import main

sys.exit(main())
