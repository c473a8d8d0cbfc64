import os

import pytest

HERE = os.path.dirname(os.path.abspath(__file__))
REPO = os.path.dirname(HERE)

DATA_DIR = os.path.join(HERE, "data")
SCENARIOS_DIR = os.path.join(REPO, "scenarios")

ATTACK_DEMO = os.path.join(SCENARIOS_DIR, "attack_demo", "scenario.txt")
FLEX_DEMO = os.path.join(SCENARIOS_DIR, "flex_demo", "scenario.txt")
FEEDER7 = os.path.join(DATA_DIR, "feeder7.grid")
FEEDER7_PROFILES = os.path.join(DATA_DIR, "feeder7_profiles.csv")


@pytest.fixture(scope="session")
def feeder7_path():
    return FEEDER7


@pytest.fixture(scope="session")
def feeder7_profiles_path():
    return FEEDER7_PROFILES


@pytest.fixture(scope="session")
def attack_demo_path():
    return ATTACK_DEMO


@pytest.fixture(scope="session")
def flex_demo_path():
    return FLEX_DEMO
