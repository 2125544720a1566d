import json

import pytest
from base64 import b64encode
from services.config_service import ConfigManager
from services.database import create_db_manager, init_db
from app import create_app
from services.reaction.core import BoxDomain, FiniteMeasure
from services.reaction.dw_engine import EngineConfig
from services.reaction.rng import RngStream


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte Carlo oracle suites")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo oracle suite (minutes); needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def app_context(app_config, get_db_manager, tmp_path):
    """Fixture for Flask app context with an in-memory run registry."""
    app = create_app('Testing')
    app.config.update(app_config)
    app.config["EXPORT_ROOT"] = str(tmp_path / "runs")
    app.config["USERS"] = {"testuser": "testpassword"}
    app.extensions["db_manager"] = get_db_manager
    with app.app_context():
        yield app


@pytest.fixture(scope="session")
def config_manager():
    """Fixture for initializing ConfigManager."""
    return ConfigManager()


@pytest.fixture(scope="session")
def app_config(config_manager):
    """Fixture for application configuration."""
    config = dict(config_manager.config)
    config.pop("database", None)
    config.pop("EXPORT_ROOT", None)
    return config


@pytest.fixture
def get_db_manager():
    """Fixture for database manager with per-test isolation."""
    db_manager = create_db_manager(":memory:")
    init_db(db_manager=db_manager)
    yield db_manager
    db_manager.close()


@pytest.fixture
def client(app_context):
    """Fixture for Flask test client."""
    return app_context.test_client()


@pytest.fixture
def cli_runner(app_context):
    """Runner for `flask sim ...` commands inside the test app."""
    return app_context.test_cli_runner()


@pytest.fixture
def auth_headers():
    """Fixture for authorization headers."""
    credentials = b64encode(b"testuser:testpassword").decode("utf-8")
    return {
        'Authorization': f'Basic {credentials}'
    }


@pytest.fixture
def rng():
    return RngStream(42, 0)


@pytest.fixture
def line_box():
    return BoxDomain.centered(4.0, 1)


@pytest.fixture
def small_engine():
    """Coarse engine settings that keep a replica under a second."""
    return EngineConfig(N=20, cell_size=0.05, horizon=10.0)


@pytest.fixture
def origin_mass(line_box):
    return FiniteMeasure.dirac(line_box, 0.05, [0.0], 1.0)


@pytest.fixture
def worked_instance(tmp_path):
    """A = {1, 2, 3}: 1 fires on its own, pushes 2 over, 3 stays below threshold."""
    data = {
        "labels": [1, 2, 3],
        "e": [0.5, 1.0, 5.0],
        "f": [1.0, 0.2, 0.0],
        "M": [[0.0, 1.0, 0.5], [0.0, 0.0, 0.5], [0.0, 0.0, 0.0]],
    }
    path = tmp_path / "instance.json"
    path.write_text(json.dumps(data))
    return path, data

