"""Training: negative sampling, subgraph batching, margin ranking, checkpoints.

One training step scores a batch of positives against sampled negatives on a
shared tape, applies the margin ranking loss and one Adam update.  After
every epoch the model is scored on the held-out validation targets
(classification AUC-PR against a fixed negative set) and the best-scoring
parameters are kept, with early stopping on patience.  Checkpoints are
directories holding a JSON manifest plus a packed float32 parameter block.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kgstore import Benchmark, KnowledgeGraph, Triple, Vocabulary
from .numkit import Tape, adam_step
from . import numkit as nk
from .rmpnet import (
    FeatureSource,
    ModelConfig,
    SubgraphSample,
    bind_params,
    init_params,
    score_sample,
)
from .subgraph import (
    disclosing_one_hop,
    extract_disclosing,
    extract_enclosing,
    prune_to_target,
    to_relation_view,
)

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_PARAMS = "params.bin"
FORMAT_VERSION = 1


class TrainError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 0.001
    batch_size: int = 16
    margin: float = 10.0
    epochs: int = 10
    seed: int = 0
    patience: int = 10
    num_negatives: int = 1
    negative_retries: int = 5  # extra draws avoiding graph collisions

    def __post_init__(self):
        if self.margin <= 0:
            raise TrainError(f"margin must be positive, got {self.margin}")
        if self.batch_size < 1:
            raise TrainError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.patience < 1 or self.num_negatives < 1:
            raise TrainError("epochs must be >= 0, patience and negatives >= 1")
        if self.negative_retries < 0:
            raise TrainError("negative retries must be >= 0")


# ------------------------------------------------------------------ samples

def build_sample(graph: KnowledgeGraph, triple: Triple, config: ModelConfig) -> SubgraphSample:
    rvg = to_relation_view(extract_enclosing(graph, triple, config.hops))
    disc = ()
    if config.use_disclosing:
        drvg = to_relation_view(extract_disclosing(graph, triple, config.hops))
        disc = tuple(disclosing_one_hop(drvg))
    return SubgraphSample(
        rvg=rvg,
        pruned=prune_to_target(rvg, config.hops),
        disclosing=disc,
        target_label=triple.relation,
    )


def _build_one(args):
    graph, triple, config = args
    return triple, build_sample(graph, triple, config)


class SampleCache:
    """Extraction cache for one graph, keyed by (triple, K, NE-flag).

    Only triples that belong to the graph (training positives, scored
    repeatedly across epochs) are retained; transient negatives are built on
    the fly so memory stays bounded by the graph size.  With `cache_dir`
    set, the retained part persists to disk keyed by graph and config
    content.
    """

    def __init__(self, graph: KnowledgeGraph, config: ModelConfig, cache_dir: str | None = None):
        self.graph = graph
        self.config = config
        self._store: dict[Triple, SubgraphSample] = {}
        self._path = None
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)
            self._path = os.path.join(cache_dir, f"subgraphs-{self._digest()}.pkl")
            self._load_disk()

    def _digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.graph.vocab.digest().encode())
        for t in self.graph.triples:
            h.update(f"{t.head},{t.relation},{t.tail};".encode())
        h.update(
            f"K={self.config.hops};ne={self.config.use_disclosing}".encode()
        )
        return h.hexdigest()[:16]

    def _load_disk(self):
        if self._path and os.path.isfile(self._path):
            try:
                with open(self._path, "rb") as fh:
                    self._store = pickle.load(fh)
            except Exception:
                self._store = {}  # stale or corrupt cache: rebuild

    def flush(self):
        if self._path:
            tmp = self._path + ".tmp"
            with open(tmp, "wb") as fh:
                pickle.dump(self._store, fh)
            os.replace(tmp, self._path)

    def sample(self, triple: Triple) -> SubgraphSample:
        got = self._store.get(triple)
        if got is not None:
            return got
        built = build_sample(self.graph, triple, self.config)
        if self.graph.has_triple(triple):
            self._store[triple] = built
        return built

    def precompute(self, triples, workers: int = 1):
        todo = [t for t in triples if t not in self._store]
        if not todo:
            return
        if workers <= 1:
            for t in todo:
                self.sample(t)
            return
        with ProcessPoolExecutor(max_workers=workers) as pool:
            jobs = [(self.graph, t, self.config) for t in todo]
            for triple, sample in pool.map(_build_one, jobs, chunksize=64):
                self._store[triple] = sample


@dataclass(frozen=True)
class TrainSample:
    pos: Triple
    neg: Triple
    pos_sub: SubgraphSample
    neg_sub: SubgraphSample

    def __post_init__(self):
        if self.neg.relation != self.pos.relation:
            raise TrainError("negative must keep the positive's relation")
        head_changed = self.neg.head != self.pos.head
        tail_changed = self.neg.tail != self.pos.tail
        if head_changed and tail_changed:
            raise TrainError("negative may differ in head or tail, not both")


# ------------------------------------------------------------------ sampling

def sample_negative(
    pos: Triple, graph: KnowledgeGraph, rng: np.random.Generator, retries: int = 5
) -> Triple:
    """Corrupt head or tail (fair coin) with a uniform graph entity.

    Up to `retries` resamples avoid candidates already present in the
    graph; the last draw is accepted regardless so sampling terminates on
    dense graphs.  The positive itself is never returned as long as any
    other corruption is constructible.
    """
    entities = graph.entity_list()
    if not entities:
        raise TrainError("cannot sample negatives from an empty graph")
    pos = Triple(*pos)
    avoidable = (
        len(entities) > 1 or entities[0] != pos.head or entities[0] != pos.tail
    )

    def draw() -> Triple:
        repl = entities[int(rng.integers(len(entities)))]
        if rng.random() < 0.5:
            return Triple(repl, pos.relation, pos.tail)
        return Triple(pos.head, pos.relation, repl)

    cand = pos
    for _ in range(retries + 1):
        cand = draw()
        guard = 0
        while avoidable and cand == pos and guard < 1000:
            cand = draw()
            guard += 1
        if not graph.has_triple(cand):
            return cand
    return cand


def margin_loss(pos_scores, neg_scores, margin: float) -> float:
    if len(pos_scores) != len(neg_scores):
        raise TrainError(
            f"score list length mismatch: {len(pos_scores)} vs {len(neg_scores)}"
        )
    return float(
        sum(max(0.0, n - p + margin) for p, n in zip(pos_scores, neg_scores))
    )


# ------------------------------------------------------------------ checkpoint

@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab_digest: str
    relation_names: tuple[str, ...]
    seen_flags: tuple[bool, ...]
    format_version: int = FORMAT_VERSION
    best_val_auc: float | None = None
    best_epoch: int | None = None
    history: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    names = sorted(ckpt.params)
    manifest = {
        "format_version": ckpt.format_version,
        "model_config": ckpt.config.to_dict(),
        "vocab_digest": ckpt.vocab_digest,
        "relations": list(ckpt.relation_names),
        "seen": [bool(s) for s in ckpt.seen_flags],
        "best_val_auc": ckpt.best_val_auc,
        "best_epoch": ckpt.best_epoch,
        "history": ckpt.history,
        "dtype": "<f4",
        "params": [
            {"name": n, "shape": list(ckpt.params[n].shape)} for n in names
        ],
    }
    with open(os.path.join(directory, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, CHECKPOINT_PARAMS), "wb") as fh:
        for n in names:
            fh.write(np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes())


def load_checkpoint(directory: str) -> Checkpoint:
    manifest_path = os.path.join(directory, CHECKPOINT_MANIFEST)
    params_path = os.path.join(directory, CHECKPOINT_PARAMS)
    for p in (manifest_path, params_path):
        if not os.path.isfile(p):
            raise TrainError(f"missing checkpoint file: {p}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise TrainError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}"
        )
    raw = open(params_path, "rb").read()
    params = {}
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        vec = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        params[entry["name"]] = vec.reshape(shape).astype(np.float64)
        offset += count * 4
    if offset != len(raw):
        raise TrainError("parameter block size does not match manifest")
    return Checkpoint(
        config=ModelConfig.from_dict(manifest["model_config"]),
        params=params,
        vocab_digest=manifest["vocab_digest"],
        relation_names=tuple(manifest["relations"]),
        seen_flags=tuple(bool(s) for s in manifest["seen"]),
        format_version=manifest["format_version"],
        best_val_auc=manifest.get("best_val_auc"),
        best_epoch=manifest.get("best_epoch"),
        history=manifest.get("history", {}),
    )


# ------------------------------------------------------------------ scoring

def relation_lookup(ckpt: Checkpoint, vocab: Vocabulary):
    """Map a vocabulary's relation ids onto checkpoint embedding rows.

    Relations are matched by name; anything absent from the checkpoint's
    seen set reports None and falls back to the unseen-draw path.
    """
    rows = {name: i for i, name in enumerate(ckpt.relation_names)}

    def lookup(label: int):
        row = rows.get(vocab.relation_names[label])
        if row is None or not ckpt.seen_flags[row]:
            return None
        return row

    return lookup


def resolve_schema_vectors(
    named_vectors: dict[str, np.ndarray],
    vocab: Vocabulary,
    expected_dim: int | None = None,
) -> dict[int, np.ndarray]:
    """Re-key exported schema vectors by relation id; all must be covered."""
    out = {}
    missing = []
    for rid, name in enumerate(vocab.relation_names):
        vec = named_vectors.get(name)
        if vec is None:
            missing.append(name)
        else:
            vec = np.asarray(vec, dtype=np.float64)
            if expected_dim is not None and vec.shape != (expected_dim,):
                raise TrainError(
                    f"schema vector for {name!r} has shape {vec.shape}; the "
                    f"model was configured for width {expected_dim}"
                )
            out[rid] = vec
    if missing:
        raise TrainError(
            f"schema vectors missing for {len(missing)} relations, "
            f"first: {missing[:5]}"
        )
    return out


def score_triples(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    cache: SampleCache,
    triples,
    lookup=None,
    schema_vectors: dict[int, np.ndarray] | None = None,
    run_seed: int = 0,
    training: bool = False,
    drop_rng=None,
) -> np.ndarray:
    """Dropout-off scores for a list of triples, one tape per triple."""
    out = np.empty(len(triples))
    for i, triple in enumerate(triples):
        sample = cache.sample(Triple(*triple))
        tape = Tape()
        pvars = bind_params(tape, params)
        source = FeatureSource(
            tape, pvars, config,
            lookup=lookup, schema_vectors=schema_vectors, run_seed=run_seed,
        )
        out[i] = float(
            score_sample(sample, source, pvars, config, training, drop_rng).value
        )
    return out


# ------------------------------------------------------------------ training

def train(
    benchmark: Benchmark,
    config: TrainConfig,
    schema_vectors: dict[str, np.ndarray] | None = None,
    cache_dir: str | None = None,
    workers: int = 1,
    log=None,
) -> Checkpoint:
    """Margin-ranking training with per-epoch validation model selection."""
    say = log if log is not None else (lambda msg: None)
    vocab = benchmark.vocab
    graph = benchmark.train
    mc = config.model

    id_vectors = None
    if mc.init_mode == "schema":
        if schema_vectors is None:
            raise TrainError("schema init mode needs pretrained schema vectors")
        id_vectors = resolve_schema_vectors(schema_vectors, vocab, mc.schema_dim)

    rng_init = np.random.default_rng(config.seed)
    params = init_params(mc, vocab.num_relations, rng_init)
    seen = vocab.seen_relations()
    lookup = lambda label: label if label in seen else None

    cache = SampleCache(graph, mc, cache_dir=cache_dir)
    positives = list(graph.triples)
    cache.precompute(positives, workers=workers)

    rng_shuffle = np.random.default_rng([config.seed, 101])
    rng_neg = np.random.default_rng([config.seed, 102])
    rng_drop = np.random.default_rng([config.seed, 103])
    rng_valneg = np.random.default_rng([config.seed, 104])

    valid = list(benchmark.valid)
    valid_negatives = [
        sample_negative(t, graph, rng_valneg, config.negative_retries) for t in valid
    ]

    def validation_auc() -> float | None:
        if not valid:
            return None
        from .evalbench import auc_pr  # late import, evalbench imports this module

        scores = np.concatenate(
            [
                score_triples(params, mc, cache, valid, lookup, id_vectors, config.seed),
                score_triples(params, mc, cache, valid_negatives, lookup, id_vectors, config.seed),
            ]
        )
        labels = np.array([1] * len(valid) + [0] * len(valid_negatives))
        return auc_pr(scores, labels)

    best_params = copy.deepcopy(params)
    best_auc = -1.0
    best_epoch = None
    adam_state = None
    train_losses: list[float] = []
    val_history: list[float] = []

    for epoch in range(config.epochs):
        order = rng_shuffle.permutation(len(positives))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [positives[i] for i in order[start : start + config.batch_size]]
            tape = Tape()
            pvars = bind_params(tape, params)
            source = FeatureSource(
                tape, pvars, mc,
                lookup=lookup, schema_vectors=id_vectors, run_seed=config.seed,
            )
            terms = []
            for pos in batch:
                pos_sub = cache.sample(pos)
                pos_score = score_sample(
                    pos_sub, source, pvars, mc, training=True, drop_rng=rng_drop
                )
                for _ in range(config.num_negatives):
                    neg = sample_negative(pos, graph, rng_neg, config.negative_retries)
                    neg_sub = cache.sample(neg)
                    TrainSample(pos, neg, pos_sub, neg_sub)  # invariant check
                    neg_score = score_sample(
                        neg_sub, source, pvars, mc, training=True, drop_rng=rng_drop
                    )
                    terms.append(
                        nk.relu(nk.shift(nk.sub(neg_score, pos_score), config.margin))
                    )
            loss = terms[0] if len(terms) == 1 else nk.add_n(terms)
            epoch_loss += float(loss.value)
            grads = tape.backward(loss)
            _, adam_state = adam_step(params, grads, adam_state, lr=config.lr)

        train_losses.append(epoch_loss / max(1, len(positives)))
        auc = validation_auc()
        if auc is not None:
            val_history.append(auc)
            if auc > best_auc:
                best_auc = auc
                best_epoch = epoch
                best_params = copy.deepcopy(params)
            say(
                f"epoch {epoch}: train loss {train_losses[-1]:.4f}, "
                f"val auc-pr {auc:.4f} (best {best_auc:.4f} @ {best_epoch})"
            )
            if epoch - best_epoch >= config.patience:
                say(f"early stop at epoch {epoch}")
                break
        else:
            # no validation targets: keep the final parameters
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            say(f"epoch {epoch}: train loss {train_losses[-1]:.4f} (no validation)")

    cache.flush()
    return Checkpoint(
        config=mc,
        params=best_params,
        vocab_digest=vocab.digest(),
        relation_names=tuple(vocab.relation_names),
        seen_flags=tuple(vocab.relation_seen(r) for r in range(vocab.num_relations)),
        best_val_auc=None if best_auc < 0 else best_auc,
        best_epoch=best_epoch,
        history={"train_loss": train_losses, "val_auc": val_history},
    )
