"""Binary code tries, encoding validity, and the exhaustive optimal-encoding oracle.

An encoding maps sample ids to bit strings read as root-to-leaf paths
(0 = left, 1 = right).  It is *valid* when codes are distinct, no code is
a proper prefix of another (samples sit at leaves), and every category
owns a prefix covering exactly its members.  The oracle enumerates every
full binary tree over the samples to find the encodings minimising total
code length, which is the computable stand-in for the shortest-address
objective the training stack optimises.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

Encoding = dict  # sample id -> bit string


class TreeNode:
    """Trie node; ``terminals`` are ids whose code ends here, ``samples`` all descendants."""

    __slots__ = ("left", "right", "terminals", "samples")

    def __init__(self):
        self.left: TreeNode | None = None
        self.right: TreeNode | None = None
        self.terminals: list = []
        self.samples: tuple = ()

    def is_leaf(self) -> bool:
        return self.left is None and self.right is None


def trie_from_codes(enc: Mapping, allow_shared: bool = False) -> TreeNode:
    """Build the trie of an encoding; right child on 1, left child on 0.

    Duplicate codes are rejected unless ``allow_shared`` is set (hardened
    codes of a learned model routinely collide within a category).
    """
    root = TreeNode()
    seen: dict[str, object] = {}
    for sid in sorted(enc, key=_sort_key):
        code = enc[sid]
        if not allow_shared and code in seen:
            raise ValueError(
                f"duplicate code {code!r} assigned to samples {seen[code]!r} and {sid!r}"
            )
        seen.setdefault(code, sid)
        node = root
        for bit in code:
            if bit == "0":
                if node.left is None:
                    node.left = TreeNode()
                node = node.left
            elif bit == "1":
                if node.right is None:
                    node.right = TreeNode()
                node = node.right
            else:
                raise ValueError(f"code for sample {sid!r} contains non-binary digit {bit!r}")
        node.terminals.append(sid)
    _annotate(root)
    return root


def _sort_key(x):
    return (0, x) if isinstance(x, (int, float)) else (1, str(x))


def _annotate(node: TreeNode) -> tuple:
    acc = list(node.terminals)
    for child in (node.left, node.right):
        if child is not None:
            acc.extend(_annotate(child))
    node.samples = tuple(acc)
    return node.samples


def tree_codes(tree: TreeNode) -> Encoding:
    """Read the encoding back out of a trie (inverse of trie_from_codes)."""
    out: Encoding = {}

    def walk(node, path):
        for sid in node.terminals:
            out[sid] = path
        if node.left is not None:
            walk(node.left, path + "0")
        if node.right is not None:
            walk(node.right, path + "1")

    walk(tree, "")
    return out


def leaf_depths(tree: TreeNode) -> list[int]:
    """Code length per sample, in sample order of the read-back encoding."""
    return [len(c) for c in tree_codes(tree).values()]


def depth_multiset_isomorphic(tree_a: TreeNode, tree_b: TreeNode) -> bool:
    """True iff both trees have the same multiset of sample depths."""
    return sorted(leaf_depths(tree_a)) == sorted(leaf_depths(tree_b))


def _as_label_map(enc: Mapping, labels) -> dict:
    if isinstance(labels, Mapping):
        missing = [sid for sid in enc if sid not in labels]
        if missing:
            raise ValueError(f"labels missing for samples {missing!r}")
        return {sid: labels[sid] for sid in enc}
    labels = list(labels)
    if len(labels) != len(enc):
        raise ValueError(f"{len(labels)} labels for {len(enc)} samples")
    return dict(zip(sorted(enc, key=_sort_key), labels))


def is_valid_encoding(enc: Mapping, labels) -> tuple[bool, str]:
    """Check validity; the witness names the offending pair or category.

    Valid means: all codes distinct, no code a proper prefix of another,
    and for each category some prefix covers exactly its members.
    """
    lab = _as_label_map(enc, labels)
    by_code: dict[str, object] = {}
    for sid, code in enc.items():
        if code in by_code:
            return False, f"samples {by_code[code]!r} and {sid!r} share code {code!r}"
        by_code[code] = sid
    items = sorted(enc.items(), key=lambda kv: _sort_key(kv[0]))
    for (sa, ca), (sb, cb) in combinations(items, 2):
        if ca != cb and (cb.startswith(ca) or ca.startswith(cb)):
            return False, (
                f"code of sample {sa!r} ({ca!r}) and sample {sb!r} ({cb!r}) "
                "are nested, so one sample sits above another"
            )
    for cat in sorted({lab[s] for s in enc}, key=_sort_key):
        members = {s for s in enc if lab[s] == cat}
        lcp = _common_prefix([enc[s] for s in members])
        cover = {s for s in enc if enc[s].startswith(lcp)}
        if cover != members:
            outsider = sorted(cover - members, key=_sort_key)[0]
            return False, (
                f"category {cat!r}: longest shared prefix {lcp!r} also covers "
                f"sample {outsider!r}"
            )
    return True, "valid"


def _common_prefix(codes: Iterable[str]) -> str:
    codes = list(codes)
    shortest = min(codes, key=len)
    for k in range(len(shortest), -1, -1):
        p = shortest[:k]
        if all(c.startswith(p) for c in codes):
            return p
    return ""


@dataclass
class PrefixStat:
    prefix: str
    purity: float
    members: int
    covered: int


def category_prefix_stats(enc: Mapping, labels) -> dict:
    """Per category: longest common prefix and the purity of its cover.

    Purity is the fraction of samples whose code carries the category's
    common prefix that actually belong to the category.
    """
    lab = _as_label_map(enc, labels)
    stats = {}
    for cat in sorted({lab[s] for s in enc}, key=_sort_key):
        members = [s for s in enc if lab[s] == cat]
        lcp = _common_prefix([enc[s] for s in members])
        covered = sum(1 for s in enc if enc[s].startswith(lcp))
        stats[cat] = PrefixStat(
            prefix=lcp,
            purity=len(members) / covered,
            members=len(members),
            covered=covered,
        )
    return stats


def mean_prefix_purity(enc: Mapping, labels) -> float:
    stats = category_prefix_stats(enc, labels)
    return sum(s.purity for s in stats.values()) / len(stats)


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

def oracle_optimal_encoding(labels, max_n: int = 8) -> tuple[int, list[Encoding]]:
    """Minimum total code length over all full binary trees, with all optima.

    Trees are enumerated up to left/right mirroring (the lowest sample id
    is kept in the left subtree), which changes neither lengths nor
    validity; each reported optimum is one canonical representative.
    Refuses instances beyond ``max_n`` rather than approximating.
    """
    if isinstance(labels, Mapping):
        lab = dict(labels)
    else:
        lab = {i: c for i, c in enumerate(labels)}
    n = len(lab)
    if n == 0:
        raise ValueError("no samples")
    if n > max_n:
        raise ValueError(f"{n} samples exceeds the exhaustive bound max_n={max_n}")
    ids = sorted(lab, key=_sort_key)
    categories = {}
    for sid in ids:
        categories.setdefault(lab[sid], set()).add(sid)
    cat_sets = [frozenset(m) for m in categories.values()]

    best = None
    optima: list[Encoding] = []
    for codes, nodesets in _gen_trees(tuple(ids)):
        if not all(cs in nodesets for cs in cat_sets):
            continue
        total = sum(len(c) for c in codes.values())
        if best is None or total < best:
            best = total
            optima = [codes]
        elif total == best:
            optima.append(codes)
    # every instance admits at least one valid tree (group categories first)
    assert best is not None and optima
    return best, optima


def _gen_trees(ids: tuple):
    """Yield (encoding, set of node leaf-sets) per canonical full binary tree."""
    if len(ids) == 1:
        yield {ids[0]: ""}, {frozenset(ids)}
        return
    pivot, rest = ids[0], ids[1:]
    whole = frozenset(ids)
    for r in range(len(rest)):
        for keep in combinations(rest, r):
            left = (pivot,) + keep
            kept = set(keep)
            right = tuple(s for s in rest if s not in kept)
            for lcodes, lsets in _gen_trees(left):
                lpart = {sid: "0" + c for sid, c in lcodes.items()}
                for rcodes, rsets in _gen_trees(right):
                    codes = dict(lpart)
                    for sid, c in rcodes.items():
                        codes[sid] = "1" + c
                    yield codes, lsets | rsets | {whole}


# ---------------------------------------------------------------------------
# learned-tree extraction and dumps
# ---------------------------------------------------------------------------

@dataclass
class LearnedTreeReport:
    tree: TreeNode
    encoding: Encoding
    stats: dict
    mean_purity: float
    text: str
    dot: str


def extract_learned_tree(model, dataset) -> LearnedTreeReport:
    """Harden the model's codes on a dataset and report the implied trie.

    ``model`` must provide ``harden_codes(features) -> list[str]``;
    ``dataset`` provides ``features`` and ``labels``.
    """
    codes = model.harden_codes(dataset.features)
    enc = {i: c for i, c in enumerate(codes)}
    labels = {i: int(l) for i, l in enumerate(dataset.labels)}
    return learned_tree_report(enc, labels)


def learned_tree_report(enc: Encoding, labels) -> LearnedTreeReport:
    lab = _as_label_map(enc, labels)
    tree = trie_from_codes(enc, allow_shared=True)
    stats = category_prefix_stats(enc, lab)
    purity = sum(s.purity for s in stats.values()) / len(stats)
    return LearnedTreeReport(
        tree=tree,
        encoding=dict(enc),
        stats=stats,
        mean_purity=purity,
        text=format_tree(tree, lab),
        dot=tree_to_dot(tree, lab),
    )


def _terminal_note(node: TreeNode, labels) -> str:
    if not node.terminals:
        return ""
    parts = []
    for sid in sorted(node.terminals, key=_sort_key):
        if labels is not None and sid in labels:
            parts.append(f"{sid}({labels[sid]})")
        else:
            parts.append(str(sid))
    return " samples=" + ",".join(parts)


def format_tree(tree: TreeNode, labels=None) -> str:
    """Indented text dump, one node per line.

    Line layout: two spaces per depth, then the node's full path ("root"
    at depth 0), then "n=<descendant count>", then "samples=..." when
    codes terminate at the node.  Left (0) children print before right.
    """
    lines: list[str] = []

    def walk(node, path, depth):
        name = path if path else "root"
        lines.append(
            "  " * depth + f"{name} n={len(node.samples)}" + _terminal_note(node, labels)
        )
        if node.left is not None:
            walk(node.left, path + "0", depth + 1)
        if node.right is not None:
            walk(node.right, path + "1", depth + 1)

    walk(tree, "", 0)
    return "\n".join(lines) + "\n"


def tree_to_dot(tree: TreeNode, labels=None) -> str:
    """Graph-description export (DOT digraph) for external visualisation."""
    lines = ["digraph category_codes {", "  node [shape=box];"]
    counter = [0]

    def walk(node, path):
        my_id = counter[0]
        counter[0] += 1
        name = path if path else "root"
        note = _terminal_note(node, labels).strip()
        label = f"{name} (n={len(node.samples)})" + (f"\\n{note}" if note else "")
        lines.append(f'  n{my_id} [label="{label}"];')
        for bit, child in (("0", node.left), ("1", node.right)):
            if child is not None:
                child_id = walk(child, path + bit)
                lines.append(f'  n{my_id} -> n{child_id} [label="{bit}"];')
        return my_id

    walk(tree, "")
    lines.append("}")
    return "\n".join(lines) + "\n"
