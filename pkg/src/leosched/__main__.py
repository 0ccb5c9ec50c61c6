from leosched.cli import main
import sys

sys.exit(main())
