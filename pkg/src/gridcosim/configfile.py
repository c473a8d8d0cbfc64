"""Sectioned plain-text config parser shared by grid, topology and scenario files.

Grammar, line by line:
  [kind]            -- section header
  [kind name]       -- named section header
  key = value       -- key/value entry ('=' must stand alone as the 2nd token)
  ident k=v k=v ... -- element row: an id followed by attribute tokens
  # comment / blank -- ignored (inline '#' comments are stripped)
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(Exception):
    """Raised on malformed config text; carries the offending line number."""

    def __init__(self, message: str, source: str = "<config>", lineno: int = 0):
        super().__init__(f"{source}:{lineno}: {message}")
        self.source = source
        self.lineno = lineno


@dataclass
class Row:
    """One element row: its id plus attribute tokens."""

    id: str
    attrs: dict[str, str]
    lineno: int

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.attrs.get(key, default)

    def require(self, key: str, source: str = "<config>") -> str:
        if key not in self.attrs:
            raise ConfigError(f"row '{self.id}' is missing '{key}'", source, self.lineno)
        return self.attrs[key]


@dataclass
class Section:
    kind: str
    name: str | None
    lineno: int
    rows: list[Row] = field(default_factory=list)
    pairs: list[tuple[str, str]] = field(default_factory=list)

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.pairs:
            if k == key:
                return v
        return default

    def get_all(self, key: str) -> list[str]:
        return [v for k, v in self.pairs if k == key]

    def require(self, key: str, source: str = "<config>") -> str:
        value = self.get(key)
        if value is None:
            raise ConfigError(f"section [{self.kind}] is missing '{key}'", source, self.lineno)
        return value


def _strip_comment(line: str) -> str:
    pos = line.find("#")
    return line if pos < 0 else line[:pos]


def parse_config(text: str, source: str = "<config>") -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", source, lineno)
            head = line[1:-1].split()
            if not head or len(head) > 2:
                raise ConfigError("section header must be [kind] or [kind name]", source, lineno)
            current = Section(kind=head[0], name=head[1] if len(head) == 2 else None, lineno=lineno)
            sections.append(current)
            continue
        if current is None:
            raise ConfigError("entry before any section header", source, lineno)
        tokens = line.split()
        if len(tokens) >= 2 and tokens[1] == "=":
            current.pairs.append((tokens[0], " ".join(tokens[2:])))
            continue
        attrs: dict[str, str] = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ConfigError(f"expected key=value token, got '{tok}'", source, lineno)
            k, _, v = tok.partition("=")
            if not k or not v:
                raise ConfigError(f"malformed key=value token '{tok}'", source, lineno)
            if k in attrs:
                raise ConfigError(f"duplicate attribute '{k}'", source, lineno)
            attrs[k] = v
        current.rows.append(Row(id=tokens[0], attrs=attrs, lineno=lineno))
    return sections


def sections_of(sections: list[Section], kind: str) -> list[Section]:
    return [s for s in sections if s.kind == kind]


def single_section(sections: list[Section], kind: str, source: str = "<config>") -> Section | None:
    found = sections_of(sections, kind)
    if len(found) > 1:
        raise ConfigError(f"section [{kind}] may appear only once", source, found[1].lineno)
    return found[0] if found else None


def as_float(value: str, what: str, source: str = "<config>", lineno: int = 0) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{what}: expected a number, got '{value}'", source, lineno) from None


def as_int(value: str, what: str, source: str = "<config>", lineno: int = 0) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{what}: expected an integer, got '{value}'", source, lineno) from None


def as_bool(value: str, what: str, source: str = "<config>", lineno: int = 0) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "on", "1", "closed"):
        return True
    if lowered in ("false", "no", "off", "0", "open"):
        return False
    raise ConfigError(f"{what}: expected a boolean, got '{value}'", source, lineno)
