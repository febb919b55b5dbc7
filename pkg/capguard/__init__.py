"""
capguard Core Module

Anonymity-preserving capabilities for Tor-routed traffic: access authorities
issue blind-signed capabilities against costly seeds, gatekeepers at sites
and relays spend them, and the simulator measures how far circuit policies
throttle botnet abuse.
"""

__version__ = "1.0.0"
__author__ = "capguard Team"
