"""Smart-survey data collection platform.

Simulated smartphone fleets generate sensor streams and answer scheduled
time-diary tasks; encrypted log chunks sync to a backend that stores,
exports, and reports on the collected data.
"""

__version__ = "0.1.0"
