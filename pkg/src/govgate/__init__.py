"""Runtime governance gateway for multi-agent systems.

Declarative rule packs are compiled into a matcher; each intercepted action
is scored against a per-agent trust factor and resolved to allow, warn,
block or escalate, with every decision written to a CSV audit trail.
"""

__version__ = "0.1.0"
