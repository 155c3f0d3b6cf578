import sys

from dementia_svm.cli import main

sys.exit(main())
