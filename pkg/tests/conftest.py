from __future__ import annotations

import pytest

from evisynth.providers import Transcript
from evisynth.sandbox.stubworker import StubTransport
from evisynth.sandbox.supervisor import SandboxSupervisor
from evisynth.toolkit.backends import FixtureBackend, ToolExecutor, default_registry
from evisynth.toolkit.entities import data_dir, load_default_store


@pytest.fixture(scope="session")
def store():
    return load_default_store()


@pytest.fixture()
def executor(store):
    return ToolExecutor(default_registry(), FixtureBackend(data_dir() / "fixtures", store))


@pytest.fixture()
def transcript():
    return Transcript()


@pytest.fixture()
def stub_supervisor():
    return SandboxSupervisor(lambda: StubTransport())
