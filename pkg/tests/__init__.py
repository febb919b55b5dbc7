"""
capguard test suite

Unit tests and shared test helpers.
"""
