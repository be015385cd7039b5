# This file makes the directory a Python package so its documents load through importlib.resources.
