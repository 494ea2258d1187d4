"""Online log template mining with a fixed-depth prefix tree (Drain-style).

Raw lines are masked with a list of regexes, tokenized on whitespace and routed
through ``root -> token count -> leading tokens -> leaf``.  Each leaf holds a
small list of templates; a line joins the most similar one or starts a new
template.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

WILDCARD = "<*>"

# Order matters: block ids and addresses must be masked before bare integers.
DEFAULT_REGEXES: tuple[tuple[str, str], ...] = (
    (r"blk_-?\d+", WILDCARD),
    (r"/?(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?", WILDCARD),
    (r"\b0[xX][0-9a-fA-F]+\b", WILDCARD),
    (r"(?<!\S)[-+]?\d+(?!\S)", WILDCARD),
)


@dataclass
class LogTemplate:
    template_id: int
    tokens: list[str]
    match_count: int = 1

    @property
    def template_string(self) -> str:
        return " ".join(self.tokens)

    def to_record(self) -> dict:
        return {
            "template_id": self.template_id,
            "template_string": self.template_string,
            "match_count": self.match_count,
        }


@dataclass(frozen=True)
class ParserConfig:
    depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100
    preprocessing_regexes: tuple[tuple[str, str], ...] = DEFAULT_REGEXES

    def __post_init__(self):
        if self.depth < 3:
            raise ValueError("depth must be at least 3 (root, length, one token level)")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must lie strictly between 0 and 1")
        if self.max_children < 1:
            raise ValueError("max_children must be positive")


class _Node:
    __slots__ = ("children", "template_ids")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.template_ids: list[int] = []


def _compile(regexes: Iterable[tuple[str, str]]) -> list[tuple[re.Pattern, str]]:
    return [(re.compile(p), r) for p, r in regexes]


def preprocess_line(raw: str, regexes: Sequence[tuple[str, str]] = DEFAULT_REGEXES) -> list[str]:
    """Mask variable fields in ``raw`` and split it on whitespace.

    >>> preprocess_line("Receiving block blk_3587 src: /10.0.0.1:50010")
    ['Receiving', 'block', '<*>', 'src:', '<*>']
    """
    text = raw.strip()
    if not text:
        return []
    for pattern, repl in regexes:
        if isinstance(pattern, str):
            text = re.sub(pattern, repl, text)
        else:
            text = pattern.sub(repl, text)
    return text.split()


def _has_digit(token: str) -> bool:
    return any(ch.isdigit() for ch in token)


class ParserState:
    """Mutable template store plus routing tree.

    Single writer; call :meth:`freeze` to get a read-only view for concurrent
    re-parsing at detection time.
    """

    def __init__(self, config: ParserConfig | None = None):
        self.config = config or ParserConfig()
        self.root = _Node()
        self.templates: list[LogTemplate] = []
        self._regexes = _compile(self.config.preprocessing_regexes)
        self.frozen = False

    # -- routing ---------------------------------------------------------
    def _prefix_len(self, n_tokens: int) -> int:
        return min(self.config.depth - 2, n_tokens)

    def _route(self, tokens: list[str], create: bool) -> _Node | None:
        node = self.root.children.get(str(len(tokens)))
        if node is None:
            if not create:
                return None
            node = self.root.children.setdefault(str(len(tokens)), _Node())
        for token in tokens[: self._prefix_len(len(tokens))]:
            key = WILDCARD if _has_digit(token) else token
            child = node.children.get(key)
            if child is None:
                if key != WILDCARD and len(node.children) >= self.config.max_children:
                    key = WILDCARD  # full node: overflow goes to the catch-all child
                    child = node.children.get(key)
                if child is None:
                    if not create:
                        return None
                    child = node.children[key] = _Node()
            node = child
        return node

    # -- matching --------------------------------------------------------
    @staticmethod
    def similarity(template: Sequence[str], tokens: Sequence[str]) -> float:
        """Fraction of positions with literally equal tokens."""
        same = sum(1 for a, b in zip(template, tokens) if a == b)
        return same / len(tokens)

    @staticmethod
    def covers(template: Sequence[str], tokens: Sequence[str]) -> bool:
        return all(a == WILDCARD or a == b for a, b in zip(template, tokens))

    def _best_match(self, leaf: _Node, tokens: list[str]) -> LogTemplate | None:
        # A template that already generalizes the line wins outright, which
        # makes re-parsing idempotent once wildcards have grown.
        for tid in sorted(leaf.template_ids):
            if self.covers(self.templates[tid].tokens, tokens):
                return self.templates[tid]
        best, best_sim = None, -1.0
        for tid in sorted(leaf.template_ids):
            sim = self.similarity(self.templates[tid].tokens, tokens)
            if sim > best_sim:
                best, best_sim = self.templates[tid], sim
        if best is not None and best_sim >= self.config.similarity_threshold:
            return best
        return None

    def tokenize(self, raw: str) -> list[str]:
        return preprocess_line(raw, self._regexes)

    def match(self, raw: str) -> int | None:
        """Look up a template without mutating the store."""
        tokens = self.tokenize(raw)
        if not tokens:
            return None
        leaf = self._route(tokens, create=False)
        if leaf is None:
            return None
        tpl = self._best_match(leaf, tokens)
        if tpl is None or not self.covers(tpl.tokens, tokens):
            return None
        return tpl.template_id

    def parse_line(self, raw: str) -> int | None:
        """Assign ``raw`` to a template, creating one if needed.

        Returns ``None`` for blank lines.
        """
        if self.frozen:
            raise RuntimeError("parser state is frozen; use match() for read-only lookups")
        tokens = self.tokenize(raw)
        if not tokens:
            return None
        leaf = self._route(tokens, create=True)
        tpl = self._best_match(leaf, tokens)
        if tpl is None:
            tpl = LogTemplate(template_id=len(self.templates), tokens=list(tokens))
            self.templates.append(tpl)
            leaf.template_ids.append(tpl.template_id)
            return tpl.template_id
        tpl.tokens = [a if a == b else WILDCARD for a, b in zip(tpl.tokens, tokens)]
        tpl.match_count += 1
        return tpl.template_id

    def freeze(self) -> "ParserState":
        self.frozen = True
        return self

    def template_records(self) -> list[dict]:
        return [t.to_record() for t in self.templates]

    def dumps_templates(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.template_records())


def parse_line(state: ParserState, raw: str) -> tuple[int | None, ParserState]:
    return state.parse_line(raw), state


# ---------------------------------------------------------------------------
# dataset adapters: isolate content / timestamp / alert flag from the header
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetAdapter:
    """Header layout of one log dataset.

    ``line_pattern`` must define a ``content`` group; ``timestamp`` and
    ``label`` groups are optional.  ``normal_label`` is the label value that
    marks a non-alert message.
    """

    name: str
    line_pattern: str
    timestamp_format: str | None = None  # None => epoch seconds, "" => absent
    normal_label: str | None = None
    session_pattern: str | None = None

    def split(self, line: str) -> dict | None:
        m = re.match(self.line_pattern, line.rstrip("\n"))
        if m is None:
            return None
        groups = m.groupdict()
        out = {"content": groups.get("content") or "", "timestamp": None, "alert": False}
        ts = groups.get("timestamp")
        if ts is not None:
            out["timestamp"] = parse_timestamp(ts, self.timestamp_format)
        label = groups.get("label")
        if label is not None and self.normal_label is not None:
            out["alert"] = label != self.normal_label
        return out


def parse_timestamp(text: str, fmt: str | None) -> float | None:
    from datetime import datetime, timezone

    try:
        if fmt is None:
            return float(text)
        return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp()
    except ValueError:
        return None


ADAPTERS: dict[str, DatasetAdapter] = {
    "hdfs": DatasetAdapter(
        name="hdfs",
        line_pattern=r"(?P<timestamp>\d{6} \d{6}) (?P<pid>\d+) (?P<level>\w+) (?P<component>\S+): (?P<content>.*)$",
        timestamp_format="%y%m%d %H%M%S",
        session_pattern=r"(blk_-?\d+)",
    ),
    "bgl": DatasetAdapter(
        name="bgl",
        line_pattern=(
            r"(?P<label>\S+) (?P<timestamp>\d+) (?P<date>\S+) (?P<node>\S+) (?P<time>\S+) "
            r"(?P<noderepeat>\S+) (?P<type>\S+) (?P<component>\S+) (?P<level>\S+) (?P<content>.*)$"
        ),
        normal_label="-",
    ),
    "thunderbird": DatasetAdapter(
        name="thunderbird",
        line_pattern=(
            r"(?P<label>\S+) (?P<timestamp>\d+) (?P<date>\S+) (?P<user>\S+) (?P<month>\S+) +(?P<day>\d+) "
            r"(?P<time>\S+) (?P<location>\S+) (?P<content>.*)$"
        ),
        normal_label="-",
    ),
    "generic": DatasetAdapter(name="generic", line_pattern=r"(?P<content>.*)$"),
}


@dataclass
class ParsedEvent:
    line_no: int
    template_id: int
    content: str = ""
    timestamp: float | None = None
    alert: bool = False
    session_key: str | None = None

    def to_record(self) -> dict:
        rec = {"line_no": self.line_no, "timestamp": self.timestamp, "template_id": self.template_id}
        if self.session_key is not None:
            rec["session_key"] = self.session_key
        if self.alert:
            rec["alert"] = True
        return rec


@dataclass
class ParseResult:
    state: ParserState
    events: list[ParsedEvent] = field(default_factory=list)
    skipped: int = 0


def parse_lines(lines: Iterable[str], adapter: DatasetAdapter | str = "generic",
                state: ParserState | None = None) -> ParseResult:
    """Run the adapter and parser over ``lines`` (1-based line numbers)."""
    if isinstance(adapter, str):
        if adapter not in ADAPTERS:
            raise KeyError(f"unknown dataset adapter {adapter!r}; choose from {sorted(ADAPTERS)}")
        adapter = ADAPTERS[adapter]
    state = state or ParserState()
    session_re = re.compile(adapter.session_pattern) if adapter.session_pattern else None
    result = ParseResult(state=state)
    for line_no, line in enumerate(lines, start=1):
        parts = adapter.split(line)
        if parts is None or not parts["content"].strip():
            result.skipped += 1
            continue
        tid = state.parse_line(parts["content"])
        if tid is None:
            result.skipped += 1
            continue
        session = None
        if session_re is not None:
            m = session_re.search(parts["content"])
            session = m.group(1) if m else None
        result.events.append(ParsedEvent(
            line_no=line_no, template_id=tid, content=parts["content"],
            timestamp=parts["timestamp"], alert=parts["alert"], session_key=session,
        ))
    return result
