"""patrol: mobile-agent network monitoring.

A manager dispatches versioned, declarative task agents whose code is
distributed once to every agent server and whose state then migrates between
hosts along planned itineraries, collecting and filtering management data
from simulated SNMP-like devices.
"""

__version__ = "0.1.0"
