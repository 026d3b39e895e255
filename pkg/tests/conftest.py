import pytest

from boostmatch.dataset import GenerateConfig, generate_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 slides, 3 training and 2 held-out queries each."""
    root = tmp_path_factory.mktemp("small")
    return generate_dataset(root, GenerateConfig(slides=4, queries_per_slide=3, test_queries_per_slide=2, seed=5))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.RESULTS:
        terminalreporter.write_line(line)
