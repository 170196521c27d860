"""Fixed-depth parse tree log template miner (Drain).

Tokens containing a digit are replaced by the wildcard before tree descent.
The tree is root -> token-count node -> ``depth - 2`` token layers -> leaf
holding a list of template groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

WILDCARD = "<*>"


def has_digit(token: str) -> bool:
    return any(c.isdigit() for c in token)


def tokenize(text: str) -> list[str]:
    tokens = text.split()
    masked = [WILDCARD if has_digit(t) else t for t in tokens]
    if tokens and all(t == WILDCARD for t in masked):
        # nothing constant would remain; keep the raw tokens as a singleton template
        return tokens
    return masked


@dataclass
class LogTemplate:
    template_id: int
    tokens: list[str]

    def text(self) -> str:
        return " ".join(self.tokens)

    def constant_tokens(self) -> list[str]:
        return [t for t in self.tokens if t != WILDCARD]


@dataclass
class _Node:
    children: dict[str, "_Node"] = field(default_factory=dict)
    groups: list[int] = field(default_factory=list)  # template ids, leaves only

    def to_dict(self) -> dict:
        return {"children": {k: v.to_dict() for k, v in self.children.items()},
                "groups": list(self.groups)}

    @classmethod
    def from_dict(cls, doc: dict) -> "_Node":
        return cls({k: cls.from_dict(v) for k, v in doc["children"].items()}, list(doc["groups"]))


class DrainParser:
    def __init__(self, depth: int = 4, similarity_threshold: float = 0.4, max_children: int = 100):
        if depth < 3:
            raise ValueError("depth must be >= 3")
        self.depth = depth
        self.st = similarity_threshold
        self.max_children = max_children
        self.root = _Node()
        self.templates: list[LogTemplate] = []

    # -- tree search ---------------------------------------------------------
    def _leaf(self, tokens: list[str], create: bool) -> _Node | None:
        node = self.root.children.get(str(len(tokens)))
        if node is None:
            if not create:
                return None
            node = self.root.children[str(len(tokens))] = _Node()
        for token in tokens[: self.depth - 2]:
            if token in node.children:
                node = node.children[token]
            elif not create:
                node = node.children.get(WILDCARD)
                if node is None:
                    return None
            elif has_digit(token) or token == WILDCARD:
                node = node.children.setdefault(WILDCARD, _Node())
            elif len(node.children) + (WILDCARD not in node.children) < self.max_children:
                node = node.children.setdefault(token, _Node())
            else:
                node = node.children.setdefault(WILDCARD, _Node())
        return node

    @staticmethod
    def _similarity(template: list[str], tokens: list[str]) -> tuple[float, int]:
        same = params = 0
        for a, b in zip(template, tokens):
            if a == WILDCARD:
                params += 1
            elif a == b:
                same += 1
        return same / len(tokens), params

    def _best(self, leaf: _Node, tokens: list[str]) -> LogTemplate | None:
        best, best_key = None, None
        for tid in leaf.groups:
            tmpl = self.templates[tid]
            sim, params = self._similarity(tmpl.tokens, tokens)
            key = (sim, params)
            if best_key is None or key > best_key:
                best, best_key = tmpl, key
        if best is None or best_key[0] < self.st:
            return None
        return best

    # -- public --------------------------------------------------------------
    def parse(self, raw_text: str) -> int:
        """Return the template id for ``raw_text``, learning a new template if needed."""
        tokens = tokenize(raw_text)
        if not tokens:
            raise ValueError("cannot parse empty log text")
        leaf = self._leaf(tokens, create=False)
        match = self._best(leaf, tokens) if leaf is not None else None
        if match is None:
            match = LogTemplate(len(self.templates), list(tokens))
            self.templates.append(match)
            self._leaf(tokens, create=True).groups.append(match.template_id)
        else:
            match.tokens = [a if a == b else WILDCARD for a, b in zip(match.tokens, tokens)]
        return match.template_id

    def match(self, raw_text: str) -> LogTemplate:
        """Read-only lookup; unmatched text yields a transient template with id -1."""
        tokens = tokenize(raw_text)
        leaf = self._leaf(tokens, create=False)
        found = self._best(leaf, tokens) if leaf is not None else None
        if found is None:
            return LogTemplate(-1, list(tokens))
        return found

    def to_dict(self) -> dict:
        return {"depth": self.depth, "similarity_threshold": self.st,
                "max_children": self.max_children, "tree": self.root.to_dict(),
                "templates": [t.tokens for t in self.templates]}

    @classmethod
    def from_dict(cls, doc: dict) -> "DrainParser":
        parser = cls(doc["depth"], doc["similarity_threshold"], doc["max_children"])
        parser.root = _Node.from_dict(doc["tree"])
        parser.templates = [LogTemplate(i, list(t)) for i, t in enumerate(doc["templates"])]
        return parser


def parse_log(raw_text: str, parser: DrainParser) -> int:
    return parser.parse(raw_text)
