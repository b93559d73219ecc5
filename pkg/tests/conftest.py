import pytest

from vpp.pipeline import PipelineConfig, VppModel, train_heads
from vpp.synth_video import default_suite, generate


@pytest.fixture(scope="session")
def train_videos():
    return [generate(s) for s in default_suite(0)]


@pytest.fixture(scope="session")
def test_videos():
    return [generate(s) for s in default_suite(1)]


def _trained(goal, videos):
    model = VppModel.init(PipelineConfig(goal_pkr=goal))
    res = train_heads(model, videos)
    return model, res.curves


@pytest.fixture(scope="session")
def trained_055(train_videos):
    return _trained(0.55, train_videos)


@pytest.fixture(scope="session")
def trained_040(train_videos):
    return _trained(0.40, train_videos)
