"""Triple store for knowledge-graph benchmarks.

A benchmark directory holds four tab-separated files (train.txt, valid.txt,
test_graph.txt, test.txt) of ``head<TAB>relation<TAB>tail`` lines.  All four
files share one entity/relation id space; relations that never occur in the
training graph are flagged unseen.  Duplicate lines are kept as distinct
triple instances because downstream graphs treat every edge instance as a
node of its own.
"""

from __future__ import annotations

import hashlib
import os
from collections import deque
from typing import Iterable, NamedTuple


class KGError(Exception):
    """Raised for malformed benchmark data or out-of-range ids."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


BENCHMARK_FILES = ("train.txt", "valid.txt", "test_graph.txt", "test.txt")


class Vocabulary:
    """Bidirectional name<->id maps for entities and relations.

    Ids are dense and assigned in first-seen order.  Each relation carries a
    seen flag: True iff the relation occurs in the training graph.
    """

    def __init__(self) -> None:
        self._entity_ids: dict[str, int] = {}
        self.entity_names: list[str] = []
        self._relation_ids: dict[str, int] = {}
        self.relation_names: list[str] = []
        self._seen: list[bool] = []

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str, create: bool = False) -> int:
        eid = self._entity_ids.get(name)
        if eid is None:
            if not create:
                raise KGError(f"unknown entity name: {name!r}")
            eid = len(self.entity_names)
            self._entity_ids[name] = eid
            self.entity_names.append(name)
        return eid

    def relation_id(self, name: str, create: bool = False) -> int:
        rid = self._relation_ids.get(name)
        if rid is None:
            if not create:
                raise KGError(f"unknown relation name: {name!r}")
            rid = len(self.relation_names)
            self._relation_ids[name] = rid
            self.relation_names.append(name)
            self._seen.append(False)
        return rid

    def has_entity(self, name: str) -> bool:
        return name in self._entity_ids

    def has_relation(self, name: str) -> bool:
        return name in self._relation_ids

    def mark_seen(self, rid: int) -> None:
        self._seen[rid] = True

    def relation_seen(self, rid: int) -> bool:
        return self._seen[rid]

    def seen_relations(self) -> frozenset[int]:
        return frozenset(r for r, s in enumerate(self._seen) if s)

    def unseen_relations(self) -> frozenset[int]:
        return frozenset(r for r, s in enumerate(self._seen) if not s)

    def digest(self) -> str:
        """Content hash of the id maps and seen flags."""
        h = hashlib.sha256()
        for name in self.entity_names:
            h.update(name.encode("utf-8") + b"\x00")
        h.update(b"\x01")
        for rid, name in enumerate(self.relation_names):
            flag = b"1" if self._seen[rid] else b"0"
            h.update(name.encode("utf-8") + b"\x1f" + flag + b"\x00")
        return h.hexdigest()


class KnowledgeGraph:
    """A multiset of triples over a shared vocabulary, with adjacency indexes.

    Adjacency entries carry the index of the triple instance so that edge
    instances (not just endpoint pairs) can be recovered.
    """

    def __init__(self, vocab: Vocabulary, triples: Iterable[Triple]) -> None:
        self.vocab = vocab
        self.triples: list[Triple] = []
        self.out_adj: dict[int, list[tuple[int, int, int]]] = {}  # head -> [(rel, tail, idx)]
        self.in_adj: dict[int, list[tuple[int, int, int]]] = {}  # tail -> [(rel, head, idx)]
        self._members: set[Triple] = set()
        self.entities: set[int] = set()
        self._entity_list: list[int] | None = None
        for t in triples:
            self.add(Triple(*t))

    def add(self, t: Triple) -> None:
        ne, nr = self.vocab.num_entities, self.vocab.num_relations
        if not (0 <= t.head < ne and 0 <= t.tail < ne):
            raise KGError(f"entity id out of range in {t}")
        if not (0 <= t.relation < nr):
            raise KGError(f"relation id out of range in {t}")
        idx = len(self.triples)
        self.triples.append(t)
        self.out_adj.setdefault(t.head, []).append((t.relation, t.tail, idx))
        self.in_adj.setdefault(t.tail, []).append((t.relation, t.head, idx))
        self._members.add(t)
        self.entities.add(t.head)
        self.entities.add(t.tail)
        self._entity_list = None

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def has_triple(self, t: Triple) -> bool:
        return Triple(*t) in self._members

    def entity_list(self) -> list[int]:
        # sorted so that uniform sampling is reproducible across runs
        if self._entity_list is None:
            self._entity_list = sorted(self.entities)
        return self._entity_list

    def undirected_neighbors(self, e: int) -> set[int]:
        out = {t for (_, t, _) in self.out_adj.get(e, ())}
        out.update(h for (_, h, _) in self.in_adj.get(e, ()))
        return out

    def relations(self) -> frozenset[int]:
        return frozenset(t.relation for t in self.triples)


def khop_neighbors(graph: KnowledgeGraph, center: int, k: int) -> dict[int, int]:
    """Entities within k undirected hops of center, mapped to their hop distance.

    The center is always present at distance 0, even when isolated.  Raises
    KGError for an id outside the vocabulary or a negative k.
    """
    if not (0 <= center < graph.vocab.num_entities):
        raise KGError(f"unknown entity id: {center}")
    if k < 0:
        raise KGError(f"negative hop count: {k}")
    dist = {center: 0}
    frontier = deque([center])
    while frontier:
        e = frontier.popleft()
        d = dist[e]
        if d == k:
            continue
        for n in graph.undirected_neighbors(e):
            if n not in dist:
                dist[n] = d + 1
                frontier.append(n)
    return dist


class Benchmark(NamedTuple):
    vocab: Vocabulary
    train: KnowledgeGraph
    valid: list[Triple]
    test_graph: KnowledgeGraph
    test: list[Triple]


def _parse_file(path: str, vocab: Vocabulary) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KGError(
                    f"{os.path.basename(path)}:{lineno}: expected 3 tab-separated "
                    f"fields, got {len(parts)}"
                )
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_benchmark(directory: str) -> Benchmark:
    """Load the four benchmark files of a directory into one id space.

    Ids are assigned in first-seen order over train, valid, test_graph, test
    (in that file order), which makes loading deterministic.  An empty
    training file is an error; the other files may be empty.
    """
    paths = {name: os.path.join(directory, name) for name in BENCHMARK_FILES}
    for name, path in paths.items():
        if not os.path.isfile(path):
            raise KGError(f"missing benchmark file: {path}")

    vocab = Vocabulary()
    raw: dict[str, list[Triple]] = {}
    for name in BENCHMARK_FILES:
        triples = []
        for h, r, t in _parse_file(paths[name], vocab):
            triples.append(
                Triple(
                    vocab.entity_id(h, create=True),
                    vocab.relation_id(r, create=True),
                    vocab.entity_id(t, create=True),
                )
            )
        raw[name] = triples

    if not raw["train.txt"]:
        raise KGError(f"empty training file: {paths['train.txt']}")
    for t in raw["train.txt"]:
        vocab.mark_seen(t.relation)

    return Benchmark(
        vocab=vocab,
        train=KnowledgeGraph(vocab, raw["train.txt"]),
        valid=raw["valid.txt"],
        test_graph=KnowledgeGraph(vocab, raw["test_graph.txt"]),
        test=raw["test.txt"],
    )


def write_triples(path: str, triples: Iterable[Triple], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(
                f"{vocab.entity_names[t.head]}\t{vocab.relation_names[t.relation]}"
                f"\t{vocab.entity_names[t.tail]}\n"
            )


def save_benchmark(bench: Benchmark, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    vocab = bench.vocab
    write_triples(os.path.join(directory, "train.txt"), bench.train.triples, vocab)
    write_triples(os.path.join(directory, "valid.txt"), bench.valid, vocab)
    write_triples(os.path.join(directory, "test_graph.txt"), bench.test_graph.triples, vocab)
    write_triples(os.path.join(directory, "test.txt"), bench.test, vocab)
