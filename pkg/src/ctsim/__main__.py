from ctsim.cli import main
import sys

sys.exit(main())
