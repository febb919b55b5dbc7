"""
capguard integration tests

Services on real sockets and full-size acceptance runs.
"""
