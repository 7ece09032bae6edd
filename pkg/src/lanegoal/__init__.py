"""Map-adaptive goal-based trajectory prediction on synthetic lane maps."""
from __future__ import annotations

__version__ = "0.1.0"
