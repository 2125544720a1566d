# tests/unit/test_helper.py
import pytest

from services.helper import base36_encode, generate_unique_id, parse_float_list, run_id


def test_base36_encode():
    assert base36_encode(0) == "0"
    assert base36_encode(35) == "Z"
    assert base36_encode(36) == "10"
    with pytest.raises(ValueError):
        base36_encode(-1)
    with pytest.raises(TypeError):
        base36_encode(1.5)


def test_run_ids_are_directory_safe_and_distinct():
    ids = {run_id("phase-scan") for _ in range(50)}
    assert len(ids) == 50
    assert all(i.startswith("phase-scan-") and i.replace("-", "").isalnum() for i in ids)


def test_unique_id_tail_length():
    assert len(generate_unique_id()) >= 7


@pytest.mark.parametrize("text, expected", [
    (None, None),
    ("0.5, 1,2", [0.5, 1.0, 2.0]),
    ("1,,2,", [1.0, 2.0]),
    ([1, "2.5"], [1.0, 2.5]),
])
def test_parse_float_list(text, expected):
    assert parse_float_list(text) == expected
