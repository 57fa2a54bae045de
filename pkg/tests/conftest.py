from __future__ import annotations

import pytest

from stopbench.sensing import load_builtin_profiles


@pytest.fixture(scope="session")
def profiles():
    return load_builtin_profiles()
