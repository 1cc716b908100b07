from __future__ import annotations

import warnings

# The in-process HTTP test client warns about its own dependency stack;
# irrelevant to what these tests assert.
warnings.filterwarnings("ignore", message=".*httpx2.*")
