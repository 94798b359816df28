import numpy as np
import pytest

from kinelift.skeleton import load_skeleton, validate_skeleton, SkeletonSpec


@pytest.fixture(scope="session")
def body():
    return load_skeleton("body_sign19")


@pytest.fixture(scope="session")
def hand():
    return load_skeleton("hand26")


def chain_spec(dof_b=(), lengths=(1.0, 1.0)):
    """root -> a -> b along +x, all unit bones; ``dof_b`` goes on joint a."""
    root_dof = [{"axis": ax, "min_deg": -180, "max_deg": 180} for ax in "XYZ"]
    return {
        "name": "chain",
        "root": "root",
        "joints": [
            {"name": "root", "parent": None, "rest_direction": [0, 0, 0], "dof": root_dof},
            {"name": "a", "parent": "root", "rest_direction": [1, 0, 0], "dof": list(dof_b), "rest_length": lengths[0]},
            {"name": "b", "parent": "a", "rest_direction": [1, 0, 0], "dof": [], "rest_length": lengths[1]},
        ],
    }


@pytest.fixture
def chain():
    return validate_skeleton(SkeletonSpec.from_dict(chain_spec()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one ``CRITERION n: PASS|FAIL`` line for the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
