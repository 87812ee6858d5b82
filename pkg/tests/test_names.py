import pytest
from hypothesis import given, strategies as st

from dapes.names import (
    MalformedName,
    Name,
    is_prefix_of,
    longest_prefix_match,
    parse_name,
    render_name,
)

components = st.text(
    alphabet=st.characters(blacklist_characters="/", blacklist_categories=("Cs",)),
    min_size=1, max_size=12,
)
names = st.lists(components, max_size=6).map(Name)


def test_parse_paper_example():
    n = parse_name("/damaged-bridge-1533783192/bridge-picture/0")
    assert len(n) == 3
    assert n.components == ("damaged-bridge-1533783192", "bridge-picture", "0")


def test_parse_root_is_empty_name():
    assert len(parse_name("/")) == 0


@pytest.mark.parametrize("text", ["/a//b", "a/b", "", "/a/", "//"])
def test_parse_rejects_malformed(text):
    with pytest.raises(MalformedName):
        parse_name(text)


def test_component_with_slash_rejected():
    with pytest.raises(MalformedName):
        Name(["a/b"])


@given(names)
def test_textual_round_trip(n):
    assert parse_name(render_name(n)) == n


def test_prefix_basics():
    a = parse_name("/a/b")
    assert is_prefix_of(a, parse_name("/a/b/c"))
    assert not is_prefix_of(a, parse_name("/a"))
    assert is_prefix_of(Name(), a)
    assert is_prefix_of(Name(), Name())


@given(names)
def test_prefix_reflexive(n):
    assert is_prefix_of(n, n)


@given(names, names, names)
def test_prefix_transitive(a, b, c):
    if is_prefix_of(a, b) and is_prefix_of(b, c):
        assert is_prefix_of(a, c)


@given(st.lists(names, min_size=1, max_size=12), names)
def test_longest_prefix_match_is_maximal(keys, query):
    table = {k: str(k) for k in keys}
    hit = longest_prefix_match(table, query)
    matching = [k for k in table if is_prefix_of(k, query)]
    if not matching:
        assert hit is None
    else:
        best = max(matching, key=len)
        assert hit is not None
        assert len(hit[0]) == len(best)
        assert is_prefix_of(hit[0], query)


def test_name_is_hashable_dict_key():
    d = {parse_name("/a/b"): 1}
    assert d[Name(["a", "b"])] == 1
