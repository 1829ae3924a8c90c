from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = ROOT / "data"
MODELS_DIR = ROOT / "models"


@pytest.fixture(scope="session")
def mnist_paths():
    images = DATA_DIR / "t10k-images-idx3-ubyte"
    labels = DATA_DIR / "t10k-labels-idx1-ubyte"
    if not images.exists() or not labels.exists():
        pytest.fail(f"MNIST test files missing under {DATA_DIR}")
    return str(images), str(labels)


@pytest.fixture(scope="session")
def shipped_model_path():
    path = MODELS_DIR / "tiny_lenet.flim"
    if not path.exists():
        pytest.fail(
            f"{path} missing; produce it with the exporter "
            "(see exporter/README section of the top-level README)"
        )
    return str(path)


@pytest.fixture(scope="session")
def reference_predictions_path():
    path = MODELS_DIR / "tiny_lenet_predictions.csv"
    if not path.exists():
        pytest.fail(f"{path} missing; produce it with the exporter")
    return str(path)


@pytest.fixture(scope="session")
def export_report_path():
    path = MODELS_DIR / "export_report.json"
    if not path.exists():
        pytest.fail(f"{path} missing; produce it with the exporter")
    return str(path)
