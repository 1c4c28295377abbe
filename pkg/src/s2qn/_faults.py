"""Test-only fault injection through ``S2QN_FAULT`` (comma-separated names)."""
import os


def active(name):
    return name in os.environ.get("S2QN_FAULT", "").split(",")
