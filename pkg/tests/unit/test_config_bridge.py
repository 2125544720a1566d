# tests/unit/test_config_bridge.py
from services.config_bridge import env_overrides, get_cfg, simulation_defaults


def test_section_and_dotted_access():
    assert get_cfg("N") == 100
    assert get_cfg("singular_solution.eps") == 0.1
    assert get_cfg("simulation", "singular_solution", "r_max") == 12.0
    assert get_cfg("missing", default="fallback") == "fallback"


def test_env_values_are_json_literals():
    env = {"REACTION_SEED": "7", "REACTION_N": "50", "REACTION_PLACEMENT": "center", "HOME": "/root"}
    assert env_overrides(env) == {"seed": 7, "N": 50, "placement": "center"}


def test_environment_wins_over_config_json():
    defaults = simulation_defaults({"REACTION_THREADS": "4"})
    assert defaults["threads"] == 4
    assert defaults["N"] == 100


def test_no_environment_leaves_config_json():
    assert simulation_defaults({}) == get_cfg()
