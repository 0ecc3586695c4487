import sys

from marketsim.agents.runtime import main

sys.exit(main())
