"""Hierarchical names and prefix matching.

Names are ordered lists of non-empty UTF-8 components, written textually
as ``/component/component/...``. The empty name is written ``/``.
Component escaping is not supported: a component containing ``/`` is
rejected outright.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Mapping, Optional, Tuple, TypeVar


class MalformedName(ValueError):
    """Raised for text that does not parse as a name."""


class Name:
    """An immutable, hashable hierarchical name."""

    __slots__ = ("components", "_hash")

    def __init__(self, components: Iterable[str] = ()):
        comps = tuple(components)
        for c in comps:
            if not isinstance(c, str) or not c:
                raise MalformedName("empty or non-string name component")
            if "/" in c:
                raise MalformedName("component may not contain '/': %r" % c)
        self.components: Tuple[str, ...] = comps
        self._hash = hash(comps)

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self) -> Iterator[str]:
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Name) and self.components == other.components

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return "Name(%r)" % (str(self),)

    def __str__(self) -> str:
        if not self.components:
            return "/"
        return "/" + "/".join(self.components)

    @classmethod
    def _raw(cls, comps: Tuple[str, ...]) -> "Name":
        """Wrap already-validated components without re-checking them."""
        n = object.__new__(cls)
        n.components = comps
        n._hash = hash(comps)
        return n

    def append(self, *components: str) -> "Name":
        return Name(self.components + components)

    def prefix(self, n: int) -> "Name":
        return Name._raw(self.components[:n])

    def is_prefix_of(self, other: "Name") -> bool:
        """True iff this name's components are a leading run of ``other``'s."""
        n = len(self.components)
        return n <= len(other.components) and other.components[:n] == self.components


def parse_name(text: str) -> Name:
    """Parse ``/a/b/c`` text into a Name; ``/`` is the empty name.

    Raises MalformedName when the leading slash is missing or any
    interior component is empty (e.g. ``/a//b``).
    """
    if not text or text[0] != "/":
        raise MalformedName("name must start with '/': %r" % text)
    if text == "/":
        return Name()
    parts = text[1:].split("/")
    for p in parts:
        if not p:
            raise MalformedName("empty component in %r" % text)
    return Name(parts)


def render_name(name: Name) -> str:
    return str(name)


def is_prefix_of(a: Name, b: Name) -> bool:
    return a.is_prefix_of(b)


V = TypeVar("V")


def longest_prefix_match(table: Mapping[Name, V], name: Name) -> Optional[Tuple[Name, V]]:
    """Return the table entry whose key is the longest prefix of ``name``.

    Probes prefixes from longest to shortest, so cost is O(len(name))
    hash lookups. Returns None when no prefix (including the empty name)
    is present.
    """
    comps = name.components
    for n in range(len(comps), -1, -1):
        key = Name(comps[:n])
        if key in table:
            return key, table[key]
    return None
