import numpy as np
import pytest

from rolemix.env import EnvConfig, PreyPredatorEnv
from rolemix.maps import parse_map


# A 7x7 arena with one defender lane (campsite, tool, agent stacked) and one
# archer lane, plus a couple of random prey. Small enough that scenario tests
# can enumerate behaviour by hand.
TINY_MAP = """\
name: tiny
max_steps: 40
smart_breach_steps: 2
grid:
.C.....
.dP....
.A.....
.......
..a.A..
..p...p
.......
"""


# No campsite and no gear: episodes end by timeout unless someone catches,
# which makes lengths and rewards easy to reason about in training tests.
MINI_MAP = """\
name: trainmini
max_steps: 12
grid:
A.p
...
p.A
"""


@pytest.fixture(scope="session")
def tiny_spec():
    return parse_map(TINY_MAP, name="tiny")


@pytest.fixture(scope="session")
def mini_map_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("maps") / "trainmini.map"
    path.write_text(MINI_MAP, encoding="utf-8")
    return path


@pytest.fixture()
def tiny_env(tiny_spec):
    return PreyPredatorEnv(tiny_spec, EnvConfig())


def make_env(map_text: str, name: str = "scenario", **env_kw) -> PreyPredatorEnv:
    return PreyPredatorEnv(parse_map(map_text, name=name), EnvConfig(**env_kw))
