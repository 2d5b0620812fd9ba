import pytest

from hypermv.config import RunConfig
from hypermv.synth import CameraRig, synth_dataset


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """3 classes x 10 subjects, 3 views of 16x16, 0.3 s each."""
    root = tmp_path_factory.mktemp("tiny")
    rig = CameraRig.ring(3, width=16, height=16, focal=20.0)
    manifests = synth_dataset(3, list(range(10)), rig, out_dir=root, duration_us=300_000)
    return root, manifests


@pytest.fixture
def tiny_config():
    return RunConfig(T=3, channels=(4, 8), epochs=1, batch_size=4, lr=1e-3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS, format_line

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(format_line(n))
