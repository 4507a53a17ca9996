"""Hexary Merkle-Patricia state trie with single and multi-key inclusion proofs.

Nodes are content addressed: the store maps ``sha256(encoding)`` to the
decoded node, and insertion copies only the root-to-leaf path, so every
historical root stays resolvable. A proof ships the proven leaves plus the
hashes of the subtrees hanging *off* the union of their root-to-leaf paths;
the verifier rebuilds the path nodes itself.

Canonical node encoding (all integers big-endian)::

    branch     0x00 | u16 child bitmap | child hashes in digit order
    extension  0x01 | u8 digit count | packed nibbles | child hash
    leaf       0x02 | u8 digit count | packed nibbles | value hash
    hash ref   0x03 | u8 digit count | packed nibbles | subtree hash   (proofs only)

Nibbles are packed high-first and zero padded to a whole byte. A serialized
proof is ``u16 leaf count | leaves | u16 node count | hash refs`` where each
leaf is its packed key digits followed by the value hash.
"""

from __future__ import annotations

import hashlib
from collections import ChainMap
from dataclasses import dataclass
from itertools import groupby
from typing import Iterable, Iterator, Sequence

from .errors import ConfigError, MissingKeyError

HASH_BYTES = 32
HASH_BITS = 8 * HASH_BYTES
MAX_RADIX = 16

BRANCH, EXTENSION, LEAF, HASHREF = 0, 1, 2, 3


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


EMPTY_ROOT = sha256(b"")


def pack_digits(digits: Sequence[int]) -> bytes:
    """Pack base-16 (or smaller) digits two per byte, high nibble first."""
    out = bytearray((len(digits) + 1) // 2)
    for i, d in enumerate(digits):
        out[i >> 1] |= d << (4 if i % 2 == 0 else 0)
    return bytes(out)


def unpack_digits(data: bytes, count: int) -> tuple[int, ...]:
    out = []
    for i in range(count):
        b = data[i >> 1]
        out.append(b >> 4 if i % 2 == 0 else b & 0x0F)
    return tuple(out)


def _packed_len(count: int) -> int:
    return (count + 1) // 2


@dataclass(frozen=True, order=True)
class AccountKey:
    """Fixed-length string of base-``radix`` digits indexing the trie."""

    digits: tuple[int, ...]
    radix: int = 16

    def __post_init__(self):
        object.__setattr__(self, "digits", tuple(int(d) for d in self.digits))
        if not 2 <= self.radix <= MAX_RADIX:
            raise ConfigError(f"radix must be in [2, {MAX_RADIX}], got {self.radix}")
        if any(not 0 <= d < self.radix for d in self.digits):
            raise ConfigError(f"key digit outside [0, {self.radix}): {self.digits}")

    @classmethod
    def from_address(cls, address: bytes, depth: int = 8, radix: int = 16) -> "AccountKey":
        """Digits of ``sha256(address)``, stretched by re-hashing if ``depth`` needs it."""
        stream = sha256(address)
        if radix == 16:
            while 2 * len(stream) < depth:
                stream += sha256(stream)
            digits = unpack_digits(stream, depth)
        else:
            n = int.from_bytes(stream, "big")
            span = radix ** depth
            while n < span:
                stream += sha256(stream)
                n = int.from_bytes(stream, "big")
            digits = _base_digits(n % span, radix, depth)
        return cls(digits, radix)

    @classmethod
    def from_index(cls, index: int, depth: int, radix: int = 16) -> "AccountKey":
        """The ``index``-th key in lexicographic order."""
        if not 0 <= index < radix ** depth:
            raise ConfigError(f"index {index} outside key space {radix}**{depth}")
        return cls(_base_digits(index, radix, depth), radix)

    def __len__(self):
        return len(self.digits)

    def __str__(self):
        return "".join("0123456789abcdef"[d] for d in self.digits)


def _base_digits(n: int, radix: int, depth: int) -> tuple[int, ...]:
    out = [0] * depth
    for i in range(depth - 1, -1, -1):
        n, out[i] = divmod(n, radix)
    return tuple(out)


@dataclass(frozen=True)
class AccountRecord:
    """Account state. Only ``version`` and ``payload`` are authenticated;
    as in Ethereum the address is implied by the leaf key."""

    address: bytes
    payload: bytes
    version: int = 0

    def __post_init__(self):
        if self.version < 0:
            raise ConfigError("version must be non-negative")

    def value_hash(self) -> bytes:
        return sha256(self.version.to_bytes(8, "big") + self.payload)


@dataclass(frozen=True, slots=True)
class Leaf:
    path: tuple[int, ...]
    value: bytes

    def encode(self) -> bytes:
        return bytes((LEAF, len(self.path))) + pack_digits(self.path) + self.value


@dataclass(frozen=True, slots=True)
class Extension:
    path: tuple[int, ...]
    child: bytes

    def encode(self) -> bytes:
        return bytes((EXTENSION, len(self.path))) + pack_digits(self.path) + self.child


@dataclass(frozen=True, slots=True)
class Branch:
    children: tuple  # one entry per digit, None where empty

    def encode(self) -> bytes:
        bitmap = 0
        hashes = []
        for d, h in enumerate(self.children):
            if h is not None:
                bitmap |= 1 << d
                hashes.append(h)
        return bytes((BRANCH,)) + bitmap.to_bytes(2, "big") + b"".join(hashes)

    def populated(self) -> int:
        return sum(h is not None for h in self.children)


TrieNode = Leaf | Extension | Branch


def decode_node(data: bytes, radix: int = 16) -> TrieNode:
    kind = data[0]
    if kind == BRANCH:
        bitmap = int.from_bytes(data[1:3], "big")
        children = []
        pos = 3
        for d in range(radix):
            if bitmap >> d & 1:
                children.append(data[pos:pos + HASH_BYTES])
                pos += HASH_BYTES
            else:
                children.append(None)
        if pos != len(data) or bitmap >> radix:
            raise ValueError("malformed branch encoding")
        return Branch(tuple(children))
    if kind in (EXTENSION, LEAF):
        n = data[1]
        path = unpack_digits(data[2:], n)
        h = data[2 + _packed_len(n):]
        if len(h) != HASH_BYTES:
            raise ValueError("malformed node encoding")
        return Extension(path, h) if kind == EXTENSION else Leaf(path, h)
    raise ValueError(f"unknown node type {kind}")


def _common_prefix(a: Sequence[int], b: Sequence[int]) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class StateTrie:
    """Mutable handle on an append-only, content-addressed node store.

    ``insert`` advances :attr:`root`; previously returned roots remain valid
    and can be passed to :meth:`prove`. Use :meth:`fork` to branch off a
    cheap overlay that shares all existing nodes.
    """

    def __init__(self, radix: int = 16, key_depth: int = 8):
        if not 2 <= radix <= MAX_RADIX:
            raise ConfigError(f"radix must be in [2, {MAX_RADIX}]")
        if not 1 <= key_depth <= 255:
            raise ConfigError("key_depth must be in [1, 255]")
        self.radix = radix
        self.key_depth = key_depth
        self._nodes: dict | ChainMap = {}
        self._values: dict | ChainMap = {}
        self._root: bytes | None = None
        self._size = 0

    # -- construction -------------------------------------------------
    @classmethod
    def from_items(cls, items: Iterable[tuple[AccountKey, AccountRecord]],
                   radix: int = 16, key_depth: int = 8) -> "StateTrie":
        """Build the trie for a whole key->record map in one bottom-up pass."""
        trie = cls(radix, key_depth)
        latest = {}
        for key, record in items:
            trie._check_key(key)
            latest[key.digits] = record
        entries = []
        for digits, record in sorted(latest.items()):
            vh = record.value_hash()
            trie._values[vh] = record
            entries.append((digits, vh))
        if entries:
            trie._root = trie._build(entries, 0)
        trie._size = len(entries)
        return trie

    @classmethod
    def full(cls, record: AccountRecord, radix: int = 16, key_depth: int = 5) -> "StateTrie":
        """Completely populated balanced trie with every key holding ``record``.

        All subtrees at one level are identical, so the store needs only one
        node per level however large ``radix**key_depth`` is.
        """
        trie = cls(radix, key_depth)
        vh = record.value_hash()
        trie._values[vh] = record
        h = trie._put(Leaf((), vh))
        for _ in range(key_depth):
            h = trie._put(Branch((h,) * radix))
        trie._root = h
        trie._size = radix ** key_depth
        return trie

    def _build(self, entries, depth):
        if len(entries) == 1:
            digits, vh = entries[0]
            return self._put(Leaf(digits[depth:], vh))
        first, last = entries[0][0], entries[-1][0]
        split = depth + _common_prefix(first[depth:], last[depth:])
        children = [None] * self.radix
        for d, group in groupby(entries, key=lambda e: e[0][split]):
            children[d] = self._build(list(group), split + 1)
        h = self._put(Branch(tuple(children)))
        if split > depth:
            h = self._put(Extension(first[depth:split], h))
        return h

    def fork(self) -> "StateTrie":
        """A new trie at the same root whose writes do not touch this one."""
        other = StateTrie(self.radix, self.key_depth)
        other._nodes = ChainMap({}, self._nodes)
        other._values = ChainMap({}, self._values)
        other._root = self._root
        other._size = self._size
        return other

    # -- basic access -------------------------------------------------
    @property
    def root(self) -> bytes:
        return self._root if self._root is not None else EMPTY_ROOT

    def __len__(self):
        return self._size

    def __contains__(self, key: AccountKey):
        return self._leaf_value(key.digits, self._root) is not None

    def node(self, node_hash: bytes) -> TrieNode:
        return self._nodes[node_hash]

    def node_count(self) -> int:
        return len(self._nodes)

    def _put(self, node) -> bytes:
        h = sha256(node.encode())
        self._nodes[h] = node
        return h

    def _check_key(self, key: AccountKey):
        if key.radix != self.radix or len(key.digits) != self.key_depth:
            raise ConfigError(
                f"key {key} does not match trie (radix {self.radix}, depth {self.key_depth})")

    def _resolve_root(self, root):
        if root is None:
            return self._root
        if root == EMPTY_ROOT:
            return None
        if root not in self._nodes:
            raise KeyError(f"unknown root {root.hex()}")
        return root

    def _leaf_value(self, path, node_hash):
        while node_hash is not None:
            node = self._nodes[node_hash]
            if isinstance(node, Leaf):
                return node.value if node.path == path else None
            if isinstance(node, Extension):
                n = len(node.path)
                if path[:n] != node.path:
                    return None
                path, node_hash = path[n:], node.child
            else:
                node_hash = node.children[path[0]]
                path = path[1:]
        return None

    def value_hash(self, key: AccountKey, root: bytes | None = None) -> bytes | None:
        self._check_key(key)
        return self._leaf_value(key.digits, self._resolve_root(root))

    def lookup(self, key: AccountKey, root: bytes | None = None) -> AccountRecord:
        vh = self.value_hash(key, root)
        if vh is None:
            raise MissingKeyError(str(key))
        return self._values[vh]

    def get(self, key: AccountKey, default=None):
        try:
            return self.lookup(key)
        except MissingKeyError:
            return default

    def items(self, root: bytes | None = None) -> Iterator[tuple[tuple[int, ...], bytes]]:
        """(digits, value hash) pairs in key order. Walks the full trie."""
        stack = [((), self._resolve_root(root))]
        while stack:
            prefix, h = stack.pop()
            if h is None:
                continue
            node = self._nodes[h]
            if isinstance(node, Leaf):
                yield prefix + node.path, node.value
            elif isinstance(node, Extension):
                stack.append((prefix + node.path, node.child))
            else:
                for d in range(self.radix - 1, -1, -1):
                    if node.children[d] is not None:
                        stack.append((prefix + (d,), node.children[d]))

    # -- insertion ----------------------------------------------------
    def insert(self, key: AccountKey, record: AccountRecord, value_hash: bytes | None = None) -> bytes:
        """Store ``record`` under ``key`` (overwriting) and return the new root.

        ``value_hash`` may carry a precomputed ``record.value_hash()``.
        """
        self._check_key(key)
        vh = value_hash if value_hash is not None else record.value_hash()
        self._values[vh] = record
        self._root, added = self._insert(self._root, key.digits, vh)
        self._size += added
        return self._root

    def _insert(self, node_hash, path, vh):
        if node_hash is None:
            return self._put(Leaf(path, vh)), 1
        node = self._nodes[node_hash]
        if isinstance(node, Branch):
            d = path[0]
            children = list(node.children)
            children[d], added = self._insert(children[d], path[1:], vh)
            return self._put(Branch(tuple(children))), added
        c = _common_prefix(node.path, path)
        if isinstance(node, Leaf):
            if c == len(path):
                return self._put(Leaf(path, vh)), 0
            old_child = self._put(Leaf(node.path[c + 1:], node.value))
        else:
            if c == len(node.path):
                child, added = self._insert(node.child, path[c:], vh)
                return self._put(Extension(node.path, child)), added
            rest = node.path[c + 1:]
            old_child = self._put(Extension(rest, node.child)) if rest else node.child
        children = [None] * self.radix
        children[node.path[c]] = old_child
        children[path[c]] = self._put(Leaf(path[c + 1:], vh))
        h = self._put(Branch(tuple(children)))
        if c:
            h = self._put(Extension(path[:c], h))
        return h, 1

    # -- proofs -------------------------------------------------------
    def prove(self, keys: Iterable[AccountKey], root: bytes | None = None) -> "InclusionProof":
        """Proof of (multiple) inclusion for ``keys`` against ``root`` (default: latest)."""
        keys = sorted(set(keys))
        for key in keys:
            self._check_key(key)
        start = self._resolve_root(root)
        target = start if start is not None else EMPTY_ROOT
        if not keys:
            return InclusionProof((), (), target, self.key_depth)
        if start is None:
            raise MissingKeyError(str(keys[0]))
        leaves: list = []
        stubs: list = []
        self._collect(start, [k.digits for k in keys], (), leaves, stubs)
        by_digits = {k.digits: k for k in keys}
        return InclusionProof(
            tuple((by_digits[d], vh) for d, vh in leaves),
            tuple(stubs),
            target,
            self.key_depth,
        )

    def _collect(self, node_hash, paths, prefix, leaves, stubs):
        node = self._nodes[node_hash]
        if isinstance(node, Leaf):
            if len(paths) != 1 or paths[0] != node.path:
                missing = [p for p in paths if p != node.path] or paths
                raise MissingKeyError(_fmt(prefix + missing[0]))
            leaves.append((prefix + node.path, node.value))
            return
        if isinstance(node, Extension):
            n = len(node.path)
            for p in paths:
                if p[:n] != node.path:
                    raise MissingKeyError(_fmt(prefix + p))
            self._collect(node.child, [p[n:] for p in paths], prefix + node.path, leaves, stubs)
            return
        groups: dict[int, list] = {}
        for p in paths:
            groups.setdefault(p[0], []).append(p[1:])
        for d, child in enumerate(node.children):
            sub = groups.get(d)
            if child is None:
                if sub:
                    raise MissingKeyError(_fmt(prefix + (d,) + sub[0]))
            elif sub:
                self._collect(child, sub, prefix + (d,), leaves, stubs)
            else:
                stubs.append((prefix + (d,), child))


def _fmt(digits):
    return "".join("0123456789abcdef"[d] for d in digits)


@dataclass(frozen=True)
class InclusionProof:
    """Proven leaves plus hash references to the off-path sibling subtrees.

    ``nodes`` holds ``(prefix, subtree hash)`` pairs where ``prefix`` is the
    digit path from the root to the sibling. For a single key this is a PoI,
    for several keys a PoMI.
    """

    leaves: tuple[tuple[AccountKey, bytes], ...]
    nodes: tuple[tuple[tuple[int, ...], bytes], ...]
    root: bytes
    key_depth: int

    @property
    def num_leaves(self) -> int:
        return len(self.leaves)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def keys(self) -> list[AccountKey]:
        return [k for k, _ in self.leaves]

    def is_minimal(self) -> bool:
        """No shipped subtree lies on (or contains) a proven path or another subtree."""
        prefixes = [p for p, _ in self.nodes]
        paths = [k.digits for k, _ in self.leaves]
        for i, p in enumerate(prefixes):
            if any(q[:len(p)] == p for q in paths):
                return False
            if any(j != i and q[:len(p)] == p for j, q in enumerate(prefixes)):
                return False
        return True

    def wire_bits(self) -> int:
        leaf_bytes = _packed_len(self.key_depth) + HASH_BYTES
        node_bytes = sum(2 + _packed_len(len(p)) + HASH_BYTES for p, _ in self.nodes)
        return 8 * (2 + len(self.leaves) * leaf_bytes + 2 + node_bytes)

    def serialize(self) -> bytes:
        out = bytearray(len(self.leaves).to_bytes(2, "big"))
        for key, vh in self.leaves:
            out += pack_digits(key.digits) + vh
        out += len(self.nodes).to_bytes(2, "big")
        for prefix, h in self.nodes:
            out += bytes((HASHREF, len(prefix))) + pack_digits(prefix) + h
        return bytes(out)

    @classmethod
    def deserialize(cls, data: bytes, root: bytes, key_depth: int, radix: int = 16) -> "InclusionProof":
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise ValueError("truncated proof")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        leaves = []
        for _ in range(int.from_bytes(take(2), "big")):
            digits = unpack_digits(take(_packed_len(key_depth)), key_depth)
            leaves.append((AccountKey(digits, radix), take(HASH_BYTES)))
        nodes = []
        for _ in range(int.from_bytes(take(2), "big")):
            kind, n = take(2)
            if kind != HASHREF:
                raise ValueError(f"unexpected node type {kind} in proof")
            prefix = unpack_digits(take(_packed_len(n)), n)
            nodes.append((prefix, take(HASH_BYTES)))
        if pos != len(data):
            raise ValueError("trailing bytes after proof")
        return cls(tuple(leaves), tuple(nodes), root, key_depth)


class _Malformed(Exception):
    pass


def _reconstruct(items, lo, hi, depth):
    """Root hash of the canonical Patricia trie spanned by ``items[lo:hi]``.

    ``items`` is a sorted list of ``(digits, is_leaf, hash)``: proven leaves
    carry their full key, subtree references their prefix.
    """
    if hi - lo == 1:
        digits, is_leaf, h = items[lo]
        if is_leaf:
            return sha256(Leaf(digits[depth:], h).encode())
        if len(digits) != depth:
            raise _Malformed
        return h
    first, last = items[lo][0], items[hi - 1][0]
    split = depth
    n = min(len(first), len(last))
    while split < n and first[split] == last[split]:
        split += 1
    # in sorted order a too-short entry (a prefix of the others) comes first
    if len(first) <= split:
        raise _Malformed
    children = [None] * MAX_RADIX
    i = lo
    while i < hi:
        d = items[i][0][split]
        j = i + 1
        while j < hi and items[j][0][split] == d:
            j += 1
        children[d] = _reconstruct(items, i, j, split + 1)
        i = j
    h = sha256(Branch(tuple(children)).encode())
    if split > depth:
        h = sha256(Extension(first[depth:split], h).encode())
    return h


def verify_proof(root: bytes, proof: InclusionProof, radix: int | None = None) -> bool:
    """True iff the proven leaves and shipped subtrees rebuild exactly ``root``.

    Tampering of any kind yields ``False``; a proof with no leaves proves
    nothing and is rejected.
    """
    if not proof.leaves:
        return False
    items = [(k.digits, True, vh) for k, vh in proof.leaves]
    items += [(tuple(p), False, h) for p, h in proof.nodes]
    items.sort(key=lambda it: it[0])
    try:
        if radix is not None and any(d >= radix for digits, _, _ in items for d in digits):
            return False
        if any(len(vh) != HASH_BYTES for _, _, vh in items):
            return False
        return _reconstruct(items, 0, len(items), 0) == root
    except (_Malformed, IndexError):
        return False


# -- functional aliases -----------------------------------------------------

def trie_insert(trie: StateTrie, key: AccountKey, record: AccountRecord) -> StateTrie:
    trie.insert(key, record)
    return trie


def build_proof(trie: StateTrie, keys: Iterable[AccountKey], root: bytes | None = None) -> InclusionProof:
    return trie.prove(keys, root)


def proof_size_bits(proof: InclusionProof, mode: str = "model", l_s: int = HASH_BITS) -> int:
    """Proof length in bits.

    ``model`` charges ``l_s`` per shipped subtree and ``2*l_s`` per proven
    leaf (key and value hash); ``wire`` is the exact serialized length.
    """
    if mode == "model":
        return l_s * proof.num_nodes + 2 * l_s * proof.num_leaves
    if mode == "wire":
        return proof.wire_bits()
    raise ValueError(f"unknown sizing mode {mode!r}")
