import sys

from uniedit.cli.main import main

sys.exit(main())
