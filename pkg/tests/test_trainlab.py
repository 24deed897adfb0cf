import os

import numpy as np
import pytest

from rmpi.kgstore import Benchmark, KnowledgeGraph, Triple
from rmpi.rmpnet import ModelConfig, init_params
from rmpi.trainlab import (
    Checkpoint,
    SampleCache,
    TrainConfig,
    TrainError,
    TrainSample,
    build_sample,
    load_checkpoint,
    margin_loss,
    relation_lookup,
    resolve_schema_vectors,
    sample_negative,
    save_checkpoint,
    train,
)

from synth import make_vocab, random_graph, toy_benchmark


def small_config(**overrides):
    model = ModelConfig(dim=4, hops=2, edge_dropout=0.0)
    defaults = dict(model=model, lr=0.01, batch_size=8, margin=2.0, epochs=3, seed=0)
    defaults.update(overrides)
    return TrainConfig(**defaults)


# ---------------------------------------------------------------- negatives

def test_negative_changes_exactly_one_side():
    graph = random_graph(np.random.default_rng(0), 10, 2, 25)
    rng = np.random.default_rng(1)
    pos = graph.triples[0]
    for _ in range(200):
        neg = sample_negative(pos, graph, rng)
        assert neg.relation == pos.relation
        assert (neg.head != pos.head) != (neg.tail != pos.tail)


def test_negative_never_returns_positive_in_tiny_space():
    # two entities, positive in the graph: only (B,r,B) and (A,r,A) remain
    vocab = make_vocab(2, 1)
    pos = Triple(0, 0, 1)
    graph = KnowledgeGraph(vocab, [pos])
    seen = set()
    for seed in range(300):
        neg = sample_negative(pos, graph, np.random.default_rng(seed))
        assert neg != pos
        seen.add(neg)
    assert seen == {Triple(1, 0, 1), Triple(0, 0, 0)}


def test_negative_seeded_reproducible():
    graph = random_graph(np.random.default_rng(3), 8, 2, 20)
    pos = graph.triples[5]
    runs = [
        [sample_negative(pos, graph, np.random.default_rng(42)) for _ in range(20)]
        for _ in range(2)
    ]
    assert runs[0] == runs[1]


def test_negative_collision_avoidance_rate():
    # every corruption except (3,r,1) and (0,r,3) is already in the graph;
    # the extra edge keeps entity 3 inside the sampling pool
    vocab = make_vocab(4, 2)
    pos = Triple(0, 0, 1)
    rows = [Triple(e, 0, 1) for e in (1, 2)] + [Triple(0, 0, e) for e in (0, 2)]
    graph = KnowledgeGraph(vocab, [pos] + rows + [Triple(3, 1, 3)])

    def collision_rate(retries, n=400):
        rng = np.random.default_rng(7)
        hits = sum(
            graph.has_triple(sample_negative(pos, graph, rng, retries=retries))
            for _ in range(n)
        )
        return hits / n

    assert collision_rate(retries=5) < 0.2
    assert collision_rate(retries=0) > 0.5


def test_negative_replacement_distribution():
    scipy_stats = pytest.importorskip("scipy.stats")
    n_entities = 10
    vocab = make_vocab(n_entities, 2)
    pos = Triple(0, 0, 1)
    # self loops on a second relation pull every entity into the pool
    loops = [Triple(e, 1, e) for e in range(n_entities)]
    graph = KnowledgeGraph(vocab, [pos] + loops)
    rng = np.random.default_rng(11)
    counts = np.zeros(n_entities)
    n = 2000
    for _ in range(n):
        neg = sample_negative(pos, graph, rng)
        repl = neg.head if neg.head != pos.head else neg.tail
        counts[repl] += 1
    # accepted draws are uniform over the 18 valid (side, entity) combos:
    # entity 0 only survives as a tail, entity 1 only as a head
    weights = np.full(n_entities, 2.0)
    weights[0] = weights[1] = 1.0
    expected = weights / weights.sum() * n
    assert scipy_stats.chisquare(counts, expected).pvalue > 0.01
    # untouched entities are mutually uniform
    assert scipy_stats.chisquare(counts[2:]).pvalue > 0.01


def test_margin_loss_examples():
    assert margin_loss([5.0], [1.0], 10.0) == 6.0
    assert margin_loss([5.0, 3.0], [1.0, -2.0], 1.0) == 0.0  # separated by >= margin
    assert margin_loss([2.0, 2.0], [0.0, 5.0], 1.0) == 4.0


def test_margin_loss_length_mismatch():
    with pytest.raises(TrainError):
        margin_loss([1.0, 2.0], [0.0], 1.0)


def test_margin_loss_zero_iff_separated():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pos = rng.normal(size=4)
        neg = rng.normal(size=4)
        gamma = float(rng.uniform(0.1, 3.0))
        loss = margin_loss(pos, neg, gamma)
        assert loss >= 0.0
        assert (loss == 0.0) == bool(np.all(pos - neg >= gamma))


def test_train_sample_invariants():
    graph = random_graph(np.random.default_rng(0), 6, 2, 12)
    config = ModelConfig(dim=4, hops=2)
    pos = graph.triples[0]
    sub = build_sample(graph, pos, config)
    ok = Triple(pos.head, pos.relation, (pos.tail + 1) % 6)
    TrainSample(pos, ok, sub, build_sample(graph, ok, config))
    with pytest.raises(TrainError):
        TrainSample(pos, Triple((pos.head + 1) % 6, pos.relation, (pos.tail + 1) % 6), sub, sub)
    with pytest.raises(TrainError):
        TrainSample(pos, Triple(pos.head, (pos.relation + 1) % 2, pos.tail), sub, sub)


# ---------------------------------------------------------------- cache

def test_cache_retains_graph_triples_only():
    graph = random_graph(np.random.default_rng(2), 8, 2, 16)
    config = ModelConfig(dim=4, hops=2)
    cache = SampleCache(graph, config)
    member = graph.triples[0]
    assert cache.sample(member) is cache.sample(member)
    outsider = Triple(0, 0, 1)
    while graph.has_triple(outsider):
        outsider = Triple(outsider.head, 0, outsider.tail + 1)
    first = cache.sample(outsider)
    assert outsider not in cache._store
    assert cache.sample(outsider) == first
    assert cache.sample(member) == build_sample(graph, member, config)


def test_cache_disk_round_trip(tmp_path):
    graph = random_graph(np.random.default_rng(4), 8, 2, 16)
    config = ModelConfig(dim=4, hops=2)
    cache = SampleCache(graph, config, cache_dir=str(tmp_path))
    for t in graph.triples:
        cache.sample(t)
    cache.flush()
    reloaded = SampleCache(graph, config, cache_dir=str(tmp_path))
    assert set(reloaded._store) == set(cache._store)
    for t in graph.triples:
        assert reloaded.sample(t) == cache.sample(t)


def test_cache_ignores_corrupt_file(tmp_path):
    graph = random_graph(np.random.default_rng(4), 6, 2, 10)
    config = ModelConfig(dim=4, hops=2)
    cache = SampleCache(graph, config, cache_dir=str(tmp_path))
    cache.sample(graph.triples[0])
    cache.flush()
    with open(cache._path, "wb") as fh:
        fh.write(b"not a pickle")
    rebuilt = SampleCache(graph, config, cache_dir=str(tmp_path))
    assert rebuilt._store == {}
    assert rebuilt.sample(graph.triples[0]) == cache.sample(graph.triples[0])


def test_cache_precompute_workers_match():
    graph = random_graph(np.random.default_rng(5), 10, 2, 24)
    config = ModelConfig(dim=4, hops=2)
    serial = SampleCache(graph, config)
    serial.precompute(graph.triples, workers=1)
    parallel = SampleCache(graph, config)
    parallel.precompute(graph.triples, workers=2)
    assert set(serial._store) == set(parallel._store)
    for t in serial._store:
        assert serial._store[t] == parallel._store[t]


# ---------------------------------------------------------------- checkpoints

def make_checkpoint(seed=0, **model_overrides):
    config = ModelConfig(dim=4, hops=2, **model_overrides)
    params = init_params(config, 3, np.random.default_rng(seed))
    return Checkpoint(
        config=config,
        params=params,
        vocab_digest="d" * 64,
        relation_names=("r0", "r1", "r2"),
        seen_flags=(True, True, False),
        best_val_auc=0.5,
        best_epoch=2,
        history={"train_loss": [1.0, 0.5]},
    )


def test_checkpoint_round_trip(tmp_path):
    ckpt = make_checkpoint()
    save_checkpoint(ckpt, str(tmp_path))
    back = load_checkpoint(str(tmp_path))
    assert back.config == ckpt.config
    assert back.vocab_digest == ckpt.vocab_digest
    assert back.relation_names == ckpt.relation_names
    assert back.seen_flags == ckpt.seen_flags
    assert back.best_val_auc == ckpt.best_val_auc
    assert back.best_epoch == ckpt.best_epoch
    assert back.history == ckpt.history
    assert set(back.params) == set(ckpt.params)
    for name, value in ckpt.params.items():
        stored = value.astype(np.float32).astype(np.float64)
        assert back.params[name].dtype == np.float64
        assert np.array_equal(back.params[name], stored)


def test_checkpoint_resave_identical_bytes(tmp_path):
    ckpt = make_checkpoint()
    a, b = tmp_path / "a", tmp_path / "b"
    save_checkpoint(ckpt, str(a))
    save_checkpoint(load_checkpoint(str(a)), str(b))
    for name in ("manifest.json", "params.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_checkpoint_missing_file(tmp_path):
    ckpt = make_checkpoint()
    save_checkpoint(ckpt, str(tmp_path))
    os.remove(tmp_path / "params.bin")
    with pytest.raises(TrainError, match="missing"):
        load_checkpoint(str(tmp_path))


def test_checkpoint_rejects_unknown_version(tmp_path):
    ckpt = make_checkpoint()
    save_checkpoint(ckpt, str(tmp_path))
    manifest = (tmp_path / "manifest.json").read_text().replace(
        '"format_version": 1', '"format_version": 99'
    )
    (tmp_path / "manifest.json").write_text(manifest)
    with pytest.raises(TrainError, match="format"):
        load_checkpoint(str(tmp_path))


def test_relation_lookup_matches_by_name():
    ckpt = make_checkpoint()
    vocab = make_vocab(2, 0)
    for name in ("r2", "r0", "novel"):
        vocab.relation_id(name, create=True)
    lookup = relation_lookup(ckpt, vocab)
    assert lookup(0) is None      # r2 exists but was unseen at training
    assert lookup(1) == 0         # r0 -> checkpoint row 0
    assert lookup(2) is None      # never in the checkpoint


def test_resolve_schema_vectors():
    vocab = make_vocab(2, 2)
    named = {"r0": np.ones(5), "r1": np.zeros(5)}
    by_id = resolve_schema_vectors(named, vocab)
    assert set(by_id) == {0, 1}
    assert by_id[0] @ by_id[0] == 5.0
    with pytest.raises(TrainError, match="missing"):
        resolve_schema_vectors({"r0": np.ones(5)}, vocab)


def test_resolve_schema_vectors_checks_width():
    vocab = make_vocab(2, 2)
    named = {"r0": np.ones(5), "r1": np.zeros(5)}
    assert set(resolve_schema_vectors(named, vocab, expected_dim=5)) == {0, 1}
    with pytest.raises(TrainError, match="width 7"):
        resolve_schema_vectors(named, vocab, expected_dim=7)


def test_train_accepts_configured_vector_width():
    bench = toy_benchmark(seed=2, n_entities=8, n_train=16, n_valid=4)
    model = ModelConfig(dim=4, hops=2, edge_dropout=0.0, init_mode="schema",
                        schema_dim=16)
    config = small_config(model=model, epochs=1)
    named = {name: np.random.default_rng([5, i]).normal(size=16)
             for i, name in enumerate(bench.vocab.relation_names)}
    ckpt = train(bench, config, schema_vectors=named)
    assert ckpt.params["schema_w2"].shape == (model.schema_hidden, 16)
    with pytest.raises(TrainError, match="width"):
        wrong = {k: v[:8] for k, v in named.items()}
        train(bench, config, schema_vectors=wrong)


# ---------------------------------------------------------------- training

def test_zero_epochs_returns_initialized_params():
    bench = toy_benchmark(seed=1, n_entities=8, n_train=16, n_valid=4)
    config = small_config(epochs=0)
    ckpt = train(bench, config)
    reference = init_params(config.model, bench.vocab.num_relations, np.random.default_rng(config.seed))
    assert set(ckpt.params) == set(reference)
    for name in reference:
        assert np.array_equal(ckpt.params[name], reference[name])
    assert ckpt.best_epoch is None
    assert ckpt.best_val_auc is None


def test_train_same_seed_identical():
    bench = toy_benchmark(seed=2, n_entities=8, n_train=14, n_valid=4)
    config = small_config(epochs=2, seed=9)
    a = train(bench, config)
    b = train(bench, config)
    assert a.history == b.history
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])


def test_train_seed_changes_trajectory():
    bench = toy_benchmark(seed=2, n_entities=8, n_train=14, n_valid=4)
    a = train(bench, small_config(epochs=2, seed=1))
    b = train(bench, small_config(epochs=2, seed=2))
    assert any(
        not np.array_equal(a.params[name], b.params[name]) for name in a.params
    )


def test_training_reduces_loss():
    bench = toy_benchmark(seed=3, n_entities=10, n_train=30, n_valid=6)
    config = small_config(epochs=10, lr=0.02)
    ckpt = train(bench, config)
    losses = ckpt.history["train_loss"]
    assert len(losses) == 10
    assert losses[-1] < losses[0]


def test_best_selection_takes_max_validation_auc():
    bench = toy_benchmark(seed=4, n_entities=9, n_train=20, n_valid=6)
    ckpt = train(bench, small_config(epochs=5))
    assert ckpt.best_val_auc == max(ckpt.history["val_auc"])
    assert ckpt.history["val_auc"][ckpt.best_epoch] == ckpt.best_val_auc


def test_patience_stops_stalled_run():
    bench = toy_benchmark(seed=5, n_entities=8, n_train=12, n_valid=4)
    # zero learning rate freezes parameters, so validation never improves
    config = small_config(epochs=50, lr=0.0, patience=3)
    ckpt = train(bench, config)
    assert ckpt.best_epoch == 0
    assert len(ckpt.history["val_auc"]) == 4  # epochs 0..patience
    for name, value in ckpt.params.items():
        assert np.array_equal(
            value,
            init_params(config.model, bench.vocab.num_relations,
                        np.random.default_rng(config.seed))[name],
        )


def test_no_validation_keeps_final_params():
    bench = toy_benchmark(seed=6, n_entities=8, n_train=12, n_valid=0)
    ckpt = train(bench, small_config(epochs=2))
    assert ckpt.best_val_auc is None
    assert ckpt.best_epoch == 1
    reference = init_params(
        ckpt.config, bench.vocab.num_relations, np.random.default_rng(0)
    )
    assert any(
        not np.array_equal(ckpt.params[name], reference[name]) for name in ckpt.params
    )


def test_schema_mode_requires_vectors():
    bench = toy_benchmark(seed=7, n_entities=8, n_train=12, n_valid=4)
    config = small_config(model=ModelConfig(dim=4, hops=2, init_mode="schema"))
    with pytest.raises(TrainError, match="schema"):
        train(bench, config)


def test_schema_mode_trains():
    bench = toy_benchmark(seed=7, n_entities=8, n_train=12, n_valid=3)
    config = small_config(
        model=ModelConfig(dim=4, hops=2, init_mode="schema", edge_dropout=0.0),
        epochs=1,
    )
    rng = np.random.default_rng(0)
    vectors = {name: rng.normal(size=300) for name in bench.vocab.relation_names}
    ckpt = train(bench, config, schema_vectors=vectors)
    assert "schema_w1" in ckpt.params and "rel_emb" not in ckpt.params
    for value in ckpt.params.values():
        assert np.all(np.isfinite(value))


def test_checkpoint_records_vocabulary():
    bench = toy_benchmark(seed=8, n_entities=8, n_train=12, n_valid=3)
    ckpt = train(bench, small_config(epochs=1))
    assert ckpt.vocab_digest == bench.vocab.digest()
    assert ckpt.relation_names == tuple(bench.vocab.relation_names)
    assert all(ckpt.seen_flags)


def test_trained_checkpoint_saves_and_reloads(tmp_path):
    bench = toy_benchmark(seed=9, n_entities=8, n_train=12, n_valid=3)
    ckpt = train(bench, small_config(epochs=1))
    save_checkpoint(ckpt, str(tmp_path))
    back = load_checkpoint(str(tmp_path))
    assert back.config == ckpt.config
    for name, value in ckpt.params.items():
        assert np.allclose(back.params[name], value, atol=1e-6)
