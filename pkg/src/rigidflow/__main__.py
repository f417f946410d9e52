"""Allow ``python -m rigidflow``."""
from rigidflow.cli import main

raise SystemExit(main())
