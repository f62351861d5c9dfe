import json
import os
from pathlib import Path

import numpy as np
import pytest

from freecond.data_handler import setup_test_cases
from freecond.toynet import NetConfig, gen_weights


GOLDEN_PATH = Path(__file__).parent / "golden" / "goldens.json"
UPDATE_VARIABLE = "FREECOND_UPDATE_GOLDENS"


@pytest.fixture(scope="session")
def small_config() -> NetConfig:
    return NetConfig(
        latent_channels=4,
        feature_channels=16,
        text_len=8,
        latent_factor=4,
        latent_height=4,
        latent_width=4,
        vocab_size=64,
        timesteps=6,
        seed=7,
    )


@pytest.fixture(scope="session")
def small_weights(small_config):
    return gen_weights(small_config)


@pytest.fixture(scope="session")
def default_weights():
    return gen_weights(NetConfig.default())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def case_directory(tmp_path_factory) -> Path:
    return setup_test_cases(tmp_path_factory.mktemp("cases"))


@pytest.fixture
def golden():
    """Compares a value with its pinned entry in ``golden/goldens.json``.

    A missing entry fails. With ``FREECOND_UPDATE_GOLDENS=1`` the value is
    written to the store instead.
    """

    def check(name: str, value) -> None:
        store = json.loads(GOLDEN_PATH.read_text(encoding="utf-8")) if GOLDEN_PATH.exists() else {}
        if os.environ.get(UPDATE_VARIABLE) == "1":
            store[name] = value
            GOLDEN_PATH.parent.mkdir(parents=True, exist_ok=True)
            GOLDEN_PATH.write_text(json.dumps(store, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            return
        if name not in store:
            pytest.fail(f"no golden value {name!r}; run once with {UPDATE_VARIABLE}=1 to pin it")
        assert store[name] == value

    return check
