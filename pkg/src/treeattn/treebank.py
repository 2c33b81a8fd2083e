"""Dependency and constituency trees: parsing, validation, canonical JSON.

Trees arrive pre-parsed as CoNLL-U (dependency) or PTB bracketed text
(constituency) and are held in a single ``SyntaxTree`` form: token-bearing
nodes linked by parent pointers. Node ids are assigned densely per tree in
document order, so serialization is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import FormatError, StructureError

DEPENDENCY = "dependency"
CONSTITUENCY = "constituency"
KINDS = (DEPENDENCY, CONSTITUENCY)


@dataclass(frozen=True)
class Token:
    index: int  # 1-based surface position
    form: str


@dataclass(frozen=True)
class Node:
    id: int
    label: str
    parent: int | None
    token_index: int | None = None


@dataclass(frozen=True)
class SyntaxTree:
    kind: str
    nodes: tuple[Node, ...]
    root_id: int
    tokens: tuple[Token, ...]

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def node_map(self) -> dict[int, Node]:
        return {node.id: node for node in self.nodes}

    def children_map(self) -> dict[int, list[int]]:
        """Child ids per node id, in document (id) order."""
        children: dict[int, list[int]] = {node.id: [] for node in self.nodes}
        for node in self.nodes:
            if node.parent is not None and node.parent in children:
                children[node.parent].append(node.id)
        return children

    def token_node_ids(self) -> dict[int, int]:
        """token index -> id of the node bearing it."""
        return {
            node.token_index: node.id for node in self.nodes if node.token_index is not None
        }


@dataclass(frozen=True)
class SentencePair:
    """Two sentences for pairwise inference, one tree per kind for each.

    Token indices of the second sentence are offset by the first sentence's
    token count when the pair is treated as a single n1+n2 token sequence.
    """

    first: tuple[SyntaxTree, ...]
    second: tuple[SyntaxTree, ...]

    def __post_init__(self):
        if not self.first or not self.second:
            raise StructureError("sentence pair needs at least one tree per member")
        kinds1 = tuple(t.kind for t in self.first)
        kinds2 = tuple(t.kind for t in self.second)
        if kinds1 != kinds2:
            raise StructureError(f"pair members parsed with different kinds: {kinds1} vs {kinds2}")
        if len(set(kinds1)) != len(kinds1):
            raise StructureError(f"duplicate tree kinds in pair member: {kinds1}")
        for trees in (self.first, self.second):
            counts = {t.n_tokens for t in trees}
            if len(counts) != 1:
                raise StructureError("trees of one sentence disagree on token count")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(t.kind for t in self.first)

    @property
    def n1(self) -> int:
        return self.first[0].n_tokens

    @property
    def n2(self) -> int:
        return self.second[0].n_tokens

    @property
    def n_tokens(self) -> int:
        return self.n1 + self.n2

    def trees_for(self, kind: str) -> tuple[SyntaxTree, SyntaxTree]:
        for t1, t2 in zip(self.first, self.second):
            if t1.kind == kind:
                return t1, t2
        raise StructureError(f"pair has no {kind} trees")


# ---------------------------------------------------------------------------
# CoNLL-U


def parse_conllu(text: str) -> list[SyntaxTree]:
    """Parse a CoNLL-U document into one dependency tree per sentence.

    Multiword-range lines (ID with '-') and empty-node lines (ID with '.')
    are skipped; '#' comments are ignored. HEAD 0 marks the root.
    """
    trees: list[SyntaxTree] = []
    block: list[tuple[int, str]] = []  # (line number, line)
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.startswith("#"):
            continue
        if line.strip() == "":
            if block:
                trees.append(_parse_conllu_sentence(block, len(trees) + 1))
                block = []
            continue
        block.append((lineno, line))
    if block:
        trees.append(_parse_conllu_sentence(block, len(trees) + 1))
    return trees


def _parse_conllu_sentence(block: list[tuple[int, str]], sentence_no: int) -> SyntaxTree:
    forms: dict[int, str] = {}
    heads: dict[int, int] = {}
    for lineno, line in block:
        cols = line.split("\t")
        if len(cols) != 10:
            raise FormatError(
                f"expected 10 tab-separated columns, got {len(cols)}", line=lineno
            )
        token_id = cols[0]
        if "-" in token_id or "." in token_id:
            continue
        try:
            tid = int(token_id)
        except ValueError:
            raise FormatError(f"non-integer token ID {token_id!r}", line=lineno) from None
        try:
            head = int(cols[6])
        except ValueError:
            raise FormatError(f"non-integer HEAD {cols[6]!r}", line=lineno) from None
        if tid in forms:
            raise StructureError(f"sentence {sentence_no}: duplicate token ID {tid}")
        forms[tid] = cols[1]
        heads[tid] = head

    ids = sorted(forms)
    for tid, head in heads.items():
        if head != 0 and head not in forms:
            raise StructureError(
                f"sentence {sentence_no}: HEAD {head} of token {tid} does not exist"
            )
    roots = [tid for tid, head in heads.items() if head == 0]
    if not roots:
        raise StructureError(f"sentence {sentence_no}: no token with HEAD 0")
    if len(roots) > 1:
        raise StructureError(
            f"sentence {sentence_no}: multiple tokens with HEAD 0: {sorted(roots)}"
        )
    # Cycle check: every token must reach the root by following heads.
    for tid in ids:
        seen = set()
        cur = tid
        while cur != 0:
            if cur in seen:
                raise StructureError(
                    f"sentence {sentence_no}: cycle among heads involving token {cur}"
                )
            seen.add(cur)
            cur = heads[cur]

    # Dense ids in document order; original CoNLL-U ids may have gaps after
    # skipping range/empty lines.
    id_of = {tid: i + 1 for i, tid in enumerate(ids)}
    tokens = tuple(Token(index=id_of[tid], form=forms[tid]) for tid in ids)
    nodes = tuple(
        Node(
            id=id_of[tid],
            label=forms[tid],
            parent=None if heads[tid] == 0 else id_of[heads[tid]],
            token_index=id_of[tid],
        )
        for tid in ids
    )
    return SyntaxTree(kind=DEPENDENCY, nodes=nodes, root_id=id_of[roots[0]], tokens=tokens)


# ---------------------------------------------------------------------------
# PTB bracketed trees


def parse_ptb(text: str) -> list[SyntaxTree]:
    """Parse bracketed s-expressions into one constituency tree per
    top-level expression.

    Leaves are bare atoms inside a bracket; the bracket's first atom is the
    constituent label (kept verbatim, function tags included). Subtrees
    labeled ``-NONE-`` are deleted, along with any internal node left
    childless, before tokens are numbered.
    """
    data = text.encode("utf-8")
    exprs = _read_sexprs(data)
    trees = []
    for expr, offset in exprs:
        trees.append(_sexpr_to_tree(expr, offset))
    return trees


def _read_sexprs(data: bytes):
    """Tokenize and nest bracketed expressions, tracking byte offsets."""
    exprs = []
    stack: list[list] = []
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        if b in b" \t\r\n":
            i += 1
            continue
        if b == ord("("):
            node: list = [i]  # leading element holds the opening offset
            if stack:
                stack[-1].append(node)
            stack.append(node)
            i += 1
        elif b == ord(")"):
            if not stack:
                raise FormatError("unbalanced ')'", offset=i)
            node = stack.pop()
            if not stack:
                exprs.append((node, node[0]))
            i += 1
        else:
            j = i
            while j < n and data[j] not in b" \t\r\n()":
                j += 1
            atom = data[i:j].decode("utf-8")
            if not stack:
                raise FormatError(f"atom {atom!r} outside any parenthesis", offset=i)
            stack[-1].append(atom)
            i = j
    if stack:
        raise FormatError("unbalanced '(': input ended inside an expression", offset=n)
    return exprs


class _Const:
    __slots__ = ("label", "children", "word")

    def __init__(self, label, children=None, word=None):
        self.label = label
        self.children = children or []
        self.word = word  # set on leaves only


def _build_const(expr: list, offset: int) -> _Const:
    items = expr[1:]
    if not items:
        raise FormatError("empty expression '()'", offset=expr[0])
    if isinstance(items[0], str):
        label = items[0]
        rest = items[1:]
    else:
        label = ""  # unlabeled wrapper, common around whole PTB sentences
        rest = items
    node = _Const(label)
    for item in rest:
        if isinstance(item, str):
            node.children.append(_Const(item, word=item))
        else:
            node.children.append(_build_const(item, offset))
    return node


def _prune_empty_elements(node: _Const) -> _Const | None:
    if node.word is not None:
        return node
    if node.label == "-NONE-":
        return None
    kept = []
    for child in node.children:
        pruned = _prune_empty_elements(child)
        if pruned is not None:
            kept.append(pruned)
    if not kept:
        return None
    node.children = kept
    return node


def _sexpr_to_tree(expr: list, offset: int) -> SyntaxTree:
    root = _build_const(expr, offset)
    root = _prune_empty_elements(root)
    if root is None:
        raise FormatError("expression has no tokens (empty or all '-NONE-')", offset=offset)
    if root.word is not None:
        raise FormatError("top-level expression has no constituent structure", offset=offset)

    nodes: list[Node] = []
    tokens: list[Token] = []

    def walk(const: _Const, parent_id: int | None) -> int:
        node_id = len(nodes) + 1
        if const.word is not None:
            token_index = len(tokens) + 1
            tokens.append(Token(index=token_index, form=const.word))
            nodes.append(
                Node(id=node_id, label=const.word, parent=parent_id, token_index=token_index)
            )
            return node_id
        nodes.append(Node(id=node_id, label=const.label, parent=parent_id))
        for child in const.children:
            walk(child, node_id)
        return node_id

    walk(root, None)  # pre-order: ids follow document order
    return SyntaxTree(kind=CONSTITUENCY, nodes=tuple(nodes), root_id=1, tokens=tuple(tokens))


# ---------------------------------------------------------------------------
# Validation


def validate(tree: SyntaxTree) -> list[str]:
    """Check all SyntaxTree invariants; return one description per violation.

    Empty list means the tree is well formed. This never raises.
    """
    violations: list[str] = []
    ids = [node.id for node in tree.nodes]
    id_set = set(ids)
    if len(id_set) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        violations.append(f"duplicate node ids: {', '.join(map(str, dupes))}")
        return violations  # downstream checks assume unique ids

    if tree.kind not in KINDS:
        violations.append(f"unknown tree kind {tree.kind!r}")

    node_map = {node.id: node for node in tree.nodes}
    parentless = [node.id for node in tree.nodes if node.parent is None]
    if len(parentless) > 1:
        violations.append("multiple roots: ids " + ", ".join(map(str, sorted(parentless))))
    elif not parentless:
        violations.append("no parentless node")
    elif parentless[0] != tree.root_id:
        violations.append(
            f"root_id {tree.root_id} is not the parentless node {parentless[0]}"
        )
    for node in tree.nodes:
        if node.parent is not None and node.parent not in id_set:
            violations.append(f"node {node.id} has nonexistent parent {node.parent}")

    # Connectivity and acyclicity: following parents from any node must end
    # at root_id without revisiting a node.
    for node in tree.nodes:
        seen: set[int] = set()
        cur = node.id
        while True:
            if cur in seen:
                violations.append(f"parent cycle involving node {node.id}")
                break
            seen.add(cur)
            parent = node_map[cur].parent
            if parent is None:
                if cur != tree.root_id:
                    violations.append(f"node {node.id} does not reach root {tree.root_id}")
                break
            if parent not in node_map:
                break  # nonexistent parent, reported above
            cur = parent

    n = len(tree.tokens)
    token_indices = [t.index for t in tree.tokens]
    if token_indices != list(range(1, n + 1)):
        violations.append("token indices are not 1..n in order")

    bearing = [node for node in tree.nodes if node.token_index is not None]
    borne = [node.token_index for node in bearing]
    if sorted(borne) != list(range(1, n + 1)):
        violations.append(
            "token_index values on nodes are not a bijection onto tokens: "
            + ", ".join(map(str, sorted(borne)))
        )

    children: dict[int, list[int]] = {node.id: [] for node in tree.nodes}
    for node in tree.nodes:
        if node.parent in children:
            children[node.parent].append(node.id)

    if tree.kind == DEPENDENCY:
        bare = [node.id for node in tree.nodes if node.token_index is None]
        if bare:
            violations.append(
                "dependency nodes without token_index: ids " + ", ".join(map(str, bare))
            )
    elif tree.kind == CONSTITUENCY:
        for node in tree.nodes:
            is_leaf = not children[node.id]
            if is_leaf and node.token_index is None:
                violations.append(f"internal node {node.id} has no children")
            if not is_leaf and node.token_index is not None:
                violations.append(f"non-leaf node {node.id} carries token_index")
        # Left-to-right leaf order must equal token order.
        order: list[int] = []

        def dfs(nid: int):
            kids = children[nid]
            if not kids:
                ti = node_map[nid].token_index
                if ti is not None:
                    order.append(ti)
                return
            for kid in kids:
                dfs(kid)

        if tree.root_id in node_map and len(parentless) == 1:
            dfs(tree.root_id)
            if order != sorted(order):
                violations.append(f"leaf order {order} does not match token order")

    return violations


def check_valid(tree: SyntaxTree) -> None:
    """Raise StructureError when validate() reports anything."""
    violations = validate(tree)
    if violations:
        raise StructureError("; ".join(violations))


# ---------------------------------------------------------------------------
# Canonical tree JSON


def tree_to_obj(tree: SyntaxTree) -> dict:
    """Canonical JSON object; key and array order are fixed."""
    return {
        "kind": tree.kind,
        "tokens": [
            {"index": t.index, "form": t.form} for t in sorted(tree.tokens, key=lambda t: t.index)
        ],
        "nodes": [
            {"id": nd.id, "label": nd.label, "parent": nd.parent, "token": nd.token_index}
            for nd in sorted(tree.nodes, key=lambda nd: nd.id)
        ],
        "root": tree.root_id,
    }


def obj_to_tree(obj) -> SyntaxTree:
    if not isinstance(obj, dict):
        raise FormatError("tree JSON must be an object")
    expected = {"kind", "tokens", "nodes", "root"}
    if set(obj) != expected:
        raise FormatError(f"tree JSON keys must be exactly {sorted(expected)}, got {sorted(obj)}")
    try:
        tokens = tuple(Token(index=t["index"], form=t["form"]) for t in obj["tokens"])
        nodes = tuple(
            Node(
                id=nd["id"],
                label=nd["label"],
                parent=nd["parent"],
                token_index=nd["token"],
            )
            for nd in obj["nodes"]
        )
        return SyntaxTree(kind=obj["kind"], nodes=nodes, root_id=obj["root"], tokens=tokens)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed tree JSON: {exc}") from None


def tree_to_json(tree: SyntaxTree) -> str:
    return json.dumps(tree_to_obj(tree), separators=(",", ":"), ensure_ascii=False)


def trees_to_json(trees) -> str:
    return json.dumps([tree_to_obj(t) for t in trees], separators=(",", ":"), ensure_ascii=False)


def trees_from_json(text: str) -> list[SyntaxTree]:
    """Load a canonical tree document: a single tree object or an array."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from None
    if isinstance(payload, dict):
        return [obj_to_tree(payload)]
    if isinstance(payload, list):
        return [obj_to_tree(item) for item in payload]
    raise FormatError("tree document must be a JSON object or array")
