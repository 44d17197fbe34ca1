import math
import random

import pytest

from guiagent.knowledge import (
    DuplicateId,
    KnowledgeDoc,
    KnowledgeStore,
    score_document,
    term_weight,
    tokenize,
)


def doc(i, body, title="", tags=()):
    return KnowledgeDoc(id=f"d{i}", title=title, body=body, tags=tuple(tags))


def brute_force_ranking(store_docs, query, k):
    """Independent oracle: recompute df and scores from scratch with plain loops."""
    df = {}
    for d in store_docs:
        for t in set(d.tokens()):
            df[t] = df.get(t, 0) + 1
    q_tokens = set(tokenize(query))
    scored = []
    for d in store_docs:
        score = 0.0
        for t in q_tokens:
            count = sum(1 for tok in d.tokens() if tok == t)
            if count:
                score += count * (1.0 / (1.0 + math.log(1 + df[t])))
        if score > 0:
            scored.append((d.id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def test_ingest_counts_and_duplicates():
    store = KnowledgeStore()
    assert store.ingest([doc(1, "alpha"), doc(2, "beta")]) == 2
    with pytest.raises(DuplicateId):
        store.ingest([doc(3, "gamma"), doc(1, "dup")])
    assert len(store) == 2  # rejection is atomic
    assert store.ingest([]) == 0


def test_priority_doc_ranked_first():
    store = KnowledgeStore()
    store.ingest([
        doc(1, "In the Task app, red represents high priority"),
        doc(2, "The camera saves photos to the gallery"),
        doc(3, "Long press an app icon to uninstall it"),
    ])
    results = store.retrieve("Tasks app high priority", k=3)
    assert results and results[0].doc.id == "d1"


def test_empty_store_returns_empty():
    assert KnowledgeStore().retrieve("anything") == []


def test_disjoint_vocabulary_scores_zero():
    store = KnowledgeStore()
    store.ingest([doc(1, "wifi toggle settings"), doc(2, "bluetooth pairing")])
    assert store.retrieve("hamburger flavor order") == []
    # oracle agrees the scores are all zero
    assert brute_force_ranking(store.documents(), "hamburger flavor order", 5) == []


def test_retrieval_determinism_and_tie_break():
    store = KnowledgeStore()
    store.ingest([doc(2, "open the clock"), doc(1, "open the clock")])
    first = store.retrieve("open clock", k=2)
    second = store.retrieve("open clock", k=2)
    assert [r.doc.id for r in first] == [r.doc.id for r in second] == ["d1", "d2"]
    assert first[0].score == first[1].score


def test_fewer_than_k_results():
    store = KnowledgeStore()
    store.ingest([doc(1, "wifi settings")])
    assert len(store.retrieve("wifi", k=5)) == 1


def test_zero_score_ingestion_never_changes_ranking():
    store = KnowledgeStore()
    store.ingest([
        doc(1, "order a spicy hamburger"),
        doc(2, "order fries and a hamburger"),
        doc(3, "hamburger hamburger hamburger"),
    ])
    query = "spicy hamburger order"
    before = [(r.doc.id, r.score) for r in store.retrieve(query, k=10)]
    store.ingest([doc(9, "totally unrelated quantum flux notes")])
    after = [(r.doc.id, r.score) for r in store.retrieve(query, k=10)]
    assert before == after


def test_scoring_matches_brute_force_oracle():
    rng = random.Random(99)
    vocabulary = "wifi bluetooth clock alarm note milk price cart phone shop app settings".split()
    store = KnowledgeStore()
    docs = []
    for i in range(20):
        body = " ".join(rng.choices(vocabulary, k=rng.randrange(3, 12)))
        d = doc(i, body)
        docs.append(d)
    store.ingest(docs)
    for _ in range(25):
        query = " ".join(rng.choices(vocabulary, k=rng.randrange(1, 5)))
        got = [(r.doc.id, r.score) for r in store.retrieve(query, k=20)]
        expected = brute_force_ranking(docs, query, 20)
        assert [g[0] for g in got] == [e[0] for e in expected]
        for (gid, gscore), (eid, escore) in zip(got, expected):
            assert gscore == pytest.approx(escore, abs=1e-12)


def test_k_validation():
    with pytest.raises(ValueError):
        KnowledgeStore().retrieve("x", k=0)


def test_empty_body_rejected():
    with pytest.raises(ValueError):
        KnowledgeDoc(id="x", title="t", body="")


def test_term_weight_decreases_with_df():
    assert term_weight(1) > term_weight(2) > term_weight(10)


def test_score_document_counts_term_frequency():
    df = {"wifi": 1}
    assert score_document(["wifi"], ["wifi", "wifi", "off"], df) == pytest.approx(
        2 * term_weight(1)
    )


def test_store_save_load_round_trip(tmp_path):
    store = KnowledgeStore()
    store.ingest([doc(1, "alpha beta", title="T", tags=("x",)), doc(2, "gamma")])
    store.save(tmp_path / "kb")
    loaded = KnowledgeStore.load(tmp_path / "kb")
    assert [d.to_dict() for d in loaded.documents()] == [d.to_dict() for d in store.documents()]
    assert [r.doc.id for r in loaded.retrieve("alpha")] == ["d1"]
