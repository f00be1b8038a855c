import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sc_lab.errors import SpecParseError
from sc_lab.mdp_io import dumps, load, loads, save, schema
from conftest import layered

DATA = __import__("pathlib").Path(__file__).parent / "data"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_roundtrip_is_bit_exact(seed):
    mdp, behavior = layered(seed)
    text = dumps(mdp, behavior)
    mdp2, behavior2 = loads(text)
    for a, b in zip(mdp.transitions, mdp2.transitions):
        assert a.tobytes() == b.tobytes()
    assert mdp.initial_dist.tobytes() == mdp2.initial_dist.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(behavior, behavior2))
    assert dumps(mdp2, behavior2) == text


def test_save_and_load(tmp_path, bandit):
    path = tmp_path / "b.json"
    save(path, *bandit)
    mdp, behavior = load(path)
    assert mdp.terminal_success == {1} and mdp.terminal_failure == {2}
    np.testing.assert_array_equal(behavior[0], [0.5, 0.5])


def test_behavior_is_optional():
    mdp, behavior = load(DATA / "no_behavior.json")
    assert behavior is None and mdp.n_actions(0) == 3


def test_shipped_files_match_schema():
    import jsonschema
    for path in DATA.glob("*.json"):
        jsonschema.validate(json.loads(path.read_text()), schema())


@pytest.mark.parametrize("text,line", [("", 1), ("   \n", 1), ('{\n "format": "sc-lab-mdp",\n oops\n}', 3)])
def test_parse_errors_carry_lines(text, line):
    with pytest.raises(SpecParseError) as info:
        loads(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def _doc():
    return json.loads((DATA / "bandit.json").read_text())


def test_schema_violation_names_the_field():
    doc = _doc()
    doc["states"][0]["actions"][0]["next"][1] = "half"
    with pytest.raises(SpecParseError, match="states/0/actions/0/next/1"):
        loads(json.dumps(doc))


def test_wrong_vector_length():
    doc = _doc()
    doc["states"][0]["actions"][1]["next"] = [0.0, 1.0]
    with pytest.raises(SpecParseError, match="expected 3 entries"):
        loads(json.dumps(doc))


def test_non_stochastic_row_reported():
    doc = _doc()
    doc["states"][0]["actions"][1]["next"] = [0.0, 0.5, 0.4]
    with pytest.raises(SpecParseError, match="sums to"):
        loads(json.dumps(doc))


def test_bad_behavior_reported():
    doc = _doc()
    doc["behavior"][0] = [0.7, 0.7]
    with pytest.raises(SpecParseError, match="behavior"):
        loads(json.dumps(doc))
