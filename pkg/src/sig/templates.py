"""Prompt template grammar: literal runs plus ``{placeholder}`` fields.

Grammar, applied to UTF-8 text:

* ``{name}`` substitutes a value; names come from :data:`PLACEHOLDERS`.
* ``{{`` and ``}}`` escape literal braces.
* Anything else containing a bare ``{`` or ``}`` is an unbalanced-brace
  error reported with its byte offset.

The blend group ``[A | B | C]`` is *not* part of the grammar; it is plain
text produced by the ``name_blend`` value. :func:`extract_blend_group` is
the one shared definition of how to find it again inside a prompt.
"""

import re
from dataclasses import dataclass

from .errors import TemplateSyntaxError, UnknownPlaceholderError, UnresolvedPlaceholderError

PLACEHOLDERS = frozenset(
    {"name_blend", "age", "race", "gender", "pose_phrase", "background", "hairstyle", "expression"}
)

_NAME_RE = re.compile(r"[a-z_]+\Z")
# First bracket group containing at least one pipe; names never contain [ ] |.
_BLEND_RE = re.compile(r"\[([^\[\]]*\|[^\[\]]*)\]")


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Placeholder:
    name: str


@dataclass(frozen=True)
class PromptTemplate:
    source: str
    parts: tuple

    def placeholder_names(self):
        return [p.name for p in self.parts if isinstance(p, Placeholder)]

    def render(self, values: dict) -> str:
        out = []
        for part in self.parts:
            if isinstance(part, Literal):
                out.append(part.text)
            else:
                if part.name not in values or values[part.name] is None:
                    raise UnresolvedPlaceholderError(
                        f"no value for placeholder {{{part.name}}}"
                    )
                out.append(str(values[part.name]))
        return "".join(out)


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def parse_template(text: str) -> PromptTemplate:
    """Parse template text into an AST of literals and placeholders."""
    parts = []
    literal = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            if i + 1 < n and text[i + 1] == "{":
                literal.append("{")
                i += 2
                continue
            close = text.find("}", i + 1)
            if close == -1:
                raise TemplateSyntaxError(
                    f"unbalanced '{{' at byte offset {_byte_offset(text, i)}",
                    offset=_byte_offset(text, i),
                )
            name = text[i + 1 : close]
            if not _NAME_RE.match(name):
                raise TemplateSyntaxError(
                    f"malformed placeholder {{{name}}} at byte offset {_byte_offset(text, i)}",
                    offset=_byte_offset(text, i),
                )
            if name not in PLACEHOLDERS:
                known = ", ".join(sorted(PLACEHOLDERS))
                raise UnknownPlaceholderError(
                    f"unknown placeholder {{{name}}} (known: {known})"
                )
            if literal:
                parts.append(Literal("".join(literal)))
                literal = []
            parts.append(Placeholder(name))
            i = close + 1
        elif ch == "}":
            if i + 1 < n and text[i + 1] == "}":
                literal.append("}")
                i += 2
                continue
            raise TemplateSyntaxError(
                f"unbalanced '}}' at byte offset {_byte_offset(text, i)}",
                offset=_byte_offset(text, i),
            )
        else:
            literal.append(ch)
            i += 1
    if literal:
        parts.append(Literal("".join(literal)))
    return PromptTemplate(source=text, parts=tuple(parts))


def extract_blend_group(prompt: str):
    """Return (full_group_text, member_names) for the first blend group.

    A blend group is the first ``[...]`` run containing at least one
    ``|``; members are the pipe-separated fields with surrounding
    whitespace stripped. Returns None when the prompt has no group.
    """
    m = _BLEND_RE.search(prompt)
    if not m:
        return None
    members = tuple(part.strip() for part in m.group(1).split("|"))
    return m.group(0), members


def format_blend_group(names) -> str:
    """Canonical rendering of a name triplet as a blend group."""
    return "[" + " | ".join(names) + "]"
