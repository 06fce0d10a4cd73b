"""
Pytest hooks that pin the sweep worker pool so results do not depend on the
machine running the tests.
"""

import os, spinamp


def pytest_sessionstart(session):
    os.environ[spinamp.WORKERS_ENV] = os.environ.get(spinamp.WORKERS_ENV, '2')
