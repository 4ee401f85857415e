import pytest
from fastapi.testclient import TestClient

from subfn.bound import fit, save_scorer, score_batch
from subfn.kernel import make_weighting
from subfn.patterns import PatternRecord, build_region_index, write_patterns
from subfn.service import create_app

from conftest import pattern_from_int, random_region_index


@pytest.fixture
def client():
    return TestClient(create_app())


def inline_records(rng, m=8, n=40):
    recs = []
    for _ in range(n):
        p = pattern_from_int(int(rng.integers(0, 1 << m)), m)
        recs.append({"pattern": p.to_hex(), "error": float(rng.integers(0, 2))})
    return recs


class TestHealth:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert body["scorers"] == 0


class TestFitEndpoint:
    def test_fit_inline_records(self, client, rng):
        recs = inline_records(rng)
        r = client.post("/scorers", json={
            "scorer_id": "toy", "records": recs, "m": 8, "rho": 2.0, "delta": 0.01,
        })
        assert r.status_code == 201, r.text
        info = r.json()
        assert info["m"] == 8
        assert info["n_samples"] == len(recs)
        assert 1 <= info["n_regions"] <= len(recs)

    def test_duplicate_id_conflict(self, client, rng):
        recs = inline_records(rng, n=5)
        body = {"scorer_id": "dup", "records": recs, "m": 8, "rho": 1.0}
        assert client.post("/scorers", json=body).status_code == 201
        assert client.post("/scorers", json=body).status_code == 409

    def test_fit_from_pattern_file(self, client, tmp_path, rng):
        records = [
            PatternRecord(pattern_from_int(int(rng.integers(0, 64)), 6), float(rng.uniform()))
            for _ in range(30)
        ]
        path = tmp_path / "patterns.txt"
        write_patterns(path, records)
        r = client.post("/scorers", json={
            "scorer_id": "fromfile", "patterns_path": str(path), "rho": "inf",
        })
        assert r.status_code == 201, r.text
        assert r.json()["rho"] == "inf"

    def test_load_saved_scorer(self, client, tmp_path, rng):
        idx = random_region_index(rng, 6, 8)
        scorer = fit(idx, make_weighting(2.0, 6), 0.05)
        path = tmp_path / "scorer.txt"
        save_scorer(path, scorer)
        r = client.post("/scorers", json={"scorer_id": "saved", "scorer_path": str(path)})
        assert r.status_code == 201
        assert r.json()["delta"] == 0.05

    def test_source_exclusivity(self, client, tmp_path):
        r = client.post("/scorers", json={
            "scorer_id": "bad", "scorer_path": "a", "patterns_path": "b",
        })
        assert r.status_code == 422

    def test_missing_rho(self, client, rng):
        r = client.post("/scorers", json={
            "scorer_id": "norho", "records": inline_records(rng, n=3), "m": 8,
        })
        assert r.status_code == 422

    def test_bad_rho(self, client, rng):
        r = client.post("/scorers", json={
            "scorer_id": "badrho", "records": inline_records(rng, n=3), "m": 8,
            "rho": -2.0,
        })
        assert r.status_code == 422

    def test_bad_delta(self, client, rng):
        r = client.post("/scorers", json={
            "scorer_id": "baddelta", "records": inline_records(rng, n=3), "m": 8,
            "rho": 1.0, "delta": 0.0,
        })
        assert r.status_code == 422


class TestScoreEndpoint:
    def test_scores_match_library(self, client, rng):
        m = 8
        recs = inline_records(rng, m=m, n=60)
        client.post("/scorers", json={
            "scorer_id": "ref", "records": recs, "m": m, "rho": 2.0, "delta": 0.01,
        })
        queries = [pattern_from_int(int(rng.integers(0, 1 << m)), m) for _ in range(20)]
        r = client.post("/scorers/ref/score", json={
            "patterns": [q.to_hex() for q in queries],
        })
        assert r.status_code == 200
        got = r.json()

        from subfn.patterns import ActivationPattern
        pairs = [
            (ActivationPattern.from_hex(rec["pattern"], m), rec["error"]) for rec in recs
        ]
        scorer = fit(build_region_index(pairs), make_weighting(2.0, m), 0.01)
        expect = score_batch(scorer, queries)
        for item, lb, ld in zip(got["scores"], expect["log_bound"], expect["log_density"]):
            assert item["log_bound"] == pytest.approx(float(lb), rel=1e-12)
            assert item["log_density"] == pytest.approx(float(ld), rel=1e-12)
            assert item["gap"] > 0

    def test_unknown_scorer(self, client):
        r = client.post("/scorers/nope/score", json={"patterns": ["00"]})
        assert r.status_code == 404

    def test_bad_query_pattern(self, client, rng):
        client.post("/scorers", json={
            "scorer_id": "q", "records": inline_records(rng, n=4), "m": 8, "rho": 1.0,
        })
        r = client.post("/scorers/q/score", json={"patterns": ["zz"]})
        assert r.status_code == 422
        r = client.post("/scorers/q/score", json={"patterns": ["0011"]})
        assert r.status_code == 422  # wrong byte count for m=8

    def test_empty_patterns_rejected(self, client, rng):
        client.post("/scorers", json={
            "scorer_id": "e", "records": inline_records(rng, n=4), "m": 8, "rho": 1.0,
        })
        assert client.post("/scorers/e/score", json={"patterns": []}).status_code == 422


class TestRegistry:
    def test_list_get_delete(self, client, rng):
        client.post("/scorers", json={
            "scorer_id": "one", "records": inline_records(rng, n=6), "m": 8, "rho": 4.0,
        })
        assert [s["scorer_id"] for s in client.get("/scorers").json()] == ["one"]
        assert client.get("/scorers/one").status_code == 200
        assert client.get("/scorers/two").status_code == 404
        assert client.delete("/scorers/one").status_code == 204
        assert client.delete("/scorers/one").status_code == 404
        assert client.get("/scorers").json() == []

    def test_preload(self, tmp_path, rng):
        idx = random_region_index(rng, 5, 4)
        path = tmp_path / "pre.txt"
        save_scorer(path, fit(idx, make_weighting(1.0, 5), 0.1))
        app = create_app(preload={"warm": str(path)})
        client = TestClient(app)
        assert client.get("/scorers/warm").status_code == 200
        assert client.get("/health").json()["scorers"] == 1
