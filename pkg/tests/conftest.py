import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hintfuzz.corpus import SERVICES, service_dir  # noqa: E402
from hintfuzz.harness import load_manifest, load_service  # noqa: E402
from hintfuzz.model import RestCallAction, TestCase, Verb  # noqa: E402

HGVS_CPOS_TRUE = "Branch_at_genome.VariantAnnotator_at_line_12_position_0_TrueSide"
HGVS_REGEX_TRUE = "Branch_at_genome.VariantAnnotator_at_line_10_position_0_TrueSide"
HASH_MATCHES = "MethodReplacement_at_auth.HashValidator_at_line_13_position_0_ReturnsTrue"


@pytest.fixture(scope="session")
def services():
    return {name: load_service(service_dir(name)) for name in SERVICES}


@pytest.fixture(scope="session")
def manifests(services):
    return {name: load_manifest(service_dir(name), si) for name, si in services.items()}


@pytest.fixture
def hgvs():
    return load_service(service_dir("hgvs"))


@pytest.fixture
def hashguard():
    return load_service(service_dir("hashguard"))


def annotate(hgvsc) -> RestCallAction:
    return RestCallAction(Verb.POST, "/annotation", body={"hgvsc": hgvsc})


def sentinel_case() -> TestCase:
    return TestCase((annotate("_EM_123_XYZ"),))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, message = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {message}")
