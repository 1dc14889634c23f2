import pytest
import yaml

# A desk-top experiment small enough to train in well under a second per unit.
TINY = {
    "dataset": {"num_identities": 4, "views_per_identity": 12, "width": 4, "height": 4, "query_views": 2,
                "gallery_views": 2, "calibration_views": 2, "seed": 1},
    "channel": {"bandwidth": 256.0},
    "model": {"hidden": 16, "n_features": 8, "n_channel": 4, "codec_hidden": 16, "head_hidden": 6},
    "train": {"batch_size": 8, "ids_per_batch": 4, "epochs_stage1": 2, "epochs_stage2": 2, "learning_rate": 0.01},
    "experiment": {"snr_grid_db": [-6.0, 0.0, 8.0], "num_seeds": 2, "num_realizations": 5, "calibration_size": 8},
}


@pytest.fixture
def tiny_raw(tmp_path):
    raw = {k: dict(v) for k, v in TINY.items()}
    raw["experiment"]["output_dir"] = str(tmp_path / "out")
    return raw


@pytest.fixture
def tiny_config_file(tmp_path, tiny_raw):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_raw))
    return path


_ACCEPTANCE: list[str] = []


class AcceptanceLedger:
    def record(self, label: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append(f"{label}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else ""))
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLedger()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
