# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Fixtures for dg-forge tests."""


def pytest_addoption(parser):
    """Add options to the pytest parser.

    Args:
        parser: Pytest parser.
    """
    parser.addoption("--jobs", action="store", default="4", help="folds run concurrently")
    parser.addoption(
        "--alignment-seeds", action="store", default="5", help="seeds of the alignment check"
    )
