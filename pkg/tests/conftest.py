from pathlib import Path

import pytest

from dip_edl.config import RunConfig, parse_config


@pytest.fixture()
def small_config(tmp_path: Path) -> RunConfig:
    """A DIP run small enough to train in well under a second."""
    return parse_config(
        overrides={
            "n_classes": 2,
            "n_train": 60,
            "n_test": 40,
            "n_ood": 30,
            "blob_radius": 4.0,
            "ood_shift": 30.0,
            "hidden": "8",
            "epochs": 3,
            "batch_size": 20,
            "learning_rate": 0.01,
            "anneal_epochs": 2,
        },
        out_dir=tmp_path / "run",
    )
