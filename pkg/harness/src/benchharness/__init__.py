"""Client-side benchmark harness: scripted multi-agent tool-calling scenarios
driven against a live chat-completions server, with CSV/JSON reporting and
stateful-vs-baseline comparison."""

from .compare import CompareReport, compare
from .runner import RunReport, TurnSample, run_scenario
from .scenarios import FAMILIES, Scenario

__version__ = "0.1.0"

__all__ = [
    "CompareReport",
    "FAMILIES",
    "RunReport",
    "Scenario",
    "TurnSample",
    "compare",
    "run_scenario",
    "__version__",
]
