import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from helpers import random_model
from qac.archive import load_model, save_model
from qac.errors import ArchiveError
from qac.complete import BeamConfig, beam_search
from qac.service import CompletionService, build_app
from qac.train import OnlineConfig

from test_train import params_hash


@pytest.fixture(scope="module")
def model_path(quick_model, tmp_path_factory):
    tm = quick_model
    path = tmp_path_factory.mktemp("model") / "model.qac"
    save_model(tm.params, tm.users, tm.vocab, tm.config, path)
    return path


@pytest.fixture()
def client(model_path):
    service = CompletionService(
        load_model(model_path),
        beam=BeamConfig(beam_width=30, branching=4, max_completion_chars=20),
        online=OnlineConfig(lr=10.0),
    )
    return TestClient(build_app(service)), service


class TestArchive:
    def test_roundtrip_bit_identical(self, quick_model, tmp_path):
        tm = quick_model
        path = tmp_path / "m.qac"
        save_model(tm.params, tm.users, tm.vocab, tm.config, path)
        arc = load_model(path)
        for name, tensor in tm.params.tensors().items():
            loaded = getattr(arc.params, name)
            assert loaded.dtype == tensor.dtype
            assert (loaded == tensor).all(), name
        assert (arc.users.matrix == tm.users.matrix).all()
        assert arc.vocab.symbols == tm.vocab.symbols
        assert arc.config == tm.config

    def test_float64_models_roundtrip(self, tmp_path):
        params, cfg, users, vocab = random_model(0, float_width=64)
        path = tmp_path / "m64.qac"
        save_model(params, users, vocab, cfg, path)
        arc = load_model(path)
        assert arc.params.W.dtype == np.float64
        assert (arc.params.W == params.W).all()

    def test_truncation_detected(self, model_path, tmp_path):
        raw = model_path.read_bytes()
        bad = tmp_path / "trunc.qac"
        bad.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(ArchiveError, match="checksum|short"):
            load_model(bad)

    def test_corruption_detected(self, model_path, tmp_path):
        raw = bytearray(model_path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        bad = tmp_path / "corrupt.qac"
        bad.write_bytes(bytes(raw))
        with pytest.raises(ArchiveError, match="checksum"):
            load_model(bad)

    def test_version_bump_is_explicit_error(self, model_path, tmp_path):
        import struct
        import zlib

        raw = bytearray(model_path.read_bytes())
        raw[8:12] = struct.pack("<I", 2)  # version field after the magic
        blob = bytes(raw[:-4])
        raw[-4:] = struct.pack("<I", zlib.crc32(blob))  # keep the checksum valid
        bad = tmp_path / "future.qac"
        bad.write_bytes(bytes(raw))
        with pytest.raises(ArchiveError, match="version 2"):
            load_model(bad)

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "not.qac"
        bad.write_bytes(b"GARBAGE!" + b"\x00" * 64)
        with pytest.raises(ArchiveError, match="magic"):
            load_model(bad)

    def test_reloaded_model_completes_identically(self, quick_model, model_path):
        tm = quick_model
        arc = load_model(model_path)
        beam = BeamConfig(beam_width=20, branching=4, max_completion_chars=20, top_n=5)
        for prefix in ("ab", "ba", "ca"):
            a = beam_search(tm.params, tm.config, tm.users, 1, prefix, tm.vocab, beam)
            b = beam_search(arc.params, arc.config, arc.users, 1, prefix, arc.vocab, beam)
            assert a == b


class TestEndpoints:
    def test_health(self, client):
        http, _ = client
        body = http.get("/health").json()
        assert body["status"] == "ok"
        assert body["model_loaded"]

    def test_create_user_returns_fresh_ids(self, client):
        http, _ = client
        r1 = http.post("/users")
        r2 = http.post("/users")
        assert r1.status_code == 201 and r2.status_code == 201
        a, b = r1.json()["user_id"], r2.json()["user_id"]
        assert a != b
        assert a != 1 and b != 1

    def test_complete_contract(self, client):
        http, _ = client
        uid = http.post("/users").json()["user_id"]
        r = http.get(f"/complete?user_id={uid}&prefix=ab&top_n=5")
        assert r.status_code == 200
        completions = r.json()["completions"]
        assert 0 < len(completions) <= 5
        assert [c["rank"] for c in completions] == list(range(1, len(completions) + 1))
        lps = [c["logprob"] for c in completions]
        assert lps == sorted(lps, reverse=True)
        assert all(c["text"].startswith("ab") for c in completions)

    def test_new_user_matches_rare_user_baseline(self, client):
        http, _ = client
        uid = http.post("/users").json()["user_id"]
        fresh = http.get(f"/complete?user_id={uid}&prefix=ab&top_n=5").json()
        shared = http.get("/complete?user_id=1&prefix=ab&top_n=5").json()
        assert fresh == shared

    def test_unknown_user_404(self, client):
        http, _ = client
        r = http.get("/complete?user_id=99999&prefix=ab")
        assert r.status_code == 404
        assert r.json()["error"] == "unknown_user"
        r = http.post("/select", json={"user_id": 99999, "query": "abc"})
        assert r.status_code == 404

    def test_empty_prefix_400(self, client):
        http, _ = client
        uid = http.post("/users").json()["user_id"]
        r = http.get(f"/complete?user_id={uid}&prefix=%20%20")
        assert r.status_code == 400
        assert set(r.json()) == {"error", "detail"}

    def test_top_n_bounds(self, client):
        http, _ = client
        uid = http.post("/users").json()["user_id"]
        assert http.get(f"/complete?user_id={uid}&prefix=ab&top_n=11").status_code == 400
        r = http.get(f"/complete?user_id={uid}&prefix=ab&top_n=1")
        assert len(r.json()["completions"]) == 1

    def test_malformed_select_body_400_envelope(self, client):
        http, _ = client
        r = http.post("/select", json={"user_id": "not-an-int"})
        assert r.status_code == 400
        body = r.json()
        assert set(body) == {"error", "detail"}

    def test_repeated_request_is_deterministic(self, client):
        http, _ = client
        uid = http.post("/users").json()["user_id"]
        a = http.get(f"/complete?user_id={uid}&prefix=ba&top_n=5").json()
        b = http.get(f"/complete?user_id={uid}&prefix=ba&top_n=5").json()
        assert a == b

    def test_select_flow(self, client, quick_corpus):
        http, svc = client
        uid = http.post("/users").json()["user_id"]
        query = quick_corpus.pool_a[0]
        before = svc.cache.computations
        http.get(f"/complete?user_id={uid}&prefix={query[:2]}")
        assert svc.cache.computations == before + 1
        assert http.post("/select", json={"user_id": uid, "query": query}).status_code == 204
        http.get(f"/complete?user_id={uid}&prefix={query[:2]}")
        assert svc.cache.computations == before + 2  # exactly one recompute
        http.get(f"/complete?user_id={uid}&prefix={query[:3]}")
        assert svc.cache.computations == before + 2  # cached while unchanged

    def test_selection_lowers_nll_monotonically(self, client, quick_corpus):
        http, _ = client
        uid = http.post("/users").json()["user_id"]
        query = quick_corpus.pool_b[0]
        nlls = [http.get(f"/nll?user_id={uid}&query={query}").json()["nll"]]
        for _ in range(3):
            http.post("/select", json={"user_id": uid, "query": query})
            nlls.append(http.get(f"/nll?user_id={uid}&query={query}").json()["nll"])
        assert all(b < a for a, b in zip(nlls, nlls[1:])), nlls

    def test_warm_user_ranking_departs_from_cold_start(self, client, quick_corpus):
        http, _ = client
        warm = http.post("/users").json()["user_id"]
        cold = http.post("/users").json()["user_id"]
        target = quick_corpus.pool_a[0]
        for _ in range(5):
            http.post("/select", json={"user_id": warm, "query": target})
        prefix = target[:2]
        warm_list = http.get(f"/complete?user_id={warm}&prefix={prefix}&top_n=10").json()
        cold_list = http.get(f"/complete?user_id={cold}&prefix={prefix}&top_n=10").json()
        assert warm_list != cold_list
        warm_nll = http.get(f"/nll?user_id={warm}&query={target}").json()["nll"]
        cold_nll = http.get(f"/nll?user_id={cold}&query={target}").json()["nll"]
        assert warm_nll < cold_nll

    def test_selection_never_touches_shared_parameters(self, client, quick_corpus):
        http, svc = client
        uid = http.post("/users").json()["user_id"]
        before = params_hash(svc.params)
        errors = []

        def hammer(queries):
            try:
                for q in queries:
                    http.post("/select", json={"user_id": uid, "query": q})
                    http.get(f"/complete?user_id={uid}&prefix={q[:2]}")
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [
            threading.Thread(target=hammer, args=(quick_corpus.pool_a[:3],)),
            threading.Thread(target=hammer, args=(quick_corpus.pool_b[:3],)),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert params_hash(svc.params) == before

    def test_model_not_loaded_503(self):
        http = TestClient(build_app(None))
        assert http.post("/users").status_code == 503
        assert http.get("/complete?user_id=1&prefix=ab").status_code == 503
        assert http.get("/health").json()["model_loaded"] is False

    def test_ui_static_mount(self, model_path):
        from pathlib import Path

        dist = Path(__file__).resolve().parents[1] / "frontend" / "dist"
        if not (dist / "index.html").is_file():
            pytest.skip("frontend not built")
        service = CompletionService(load_model(model_path))
        http = TestClient(build_app(service, ui_dir=str(dist)))
        page = http.get("/ui/")
        assert page.status_code == 200
        assert "<!doctype html>" in page.text.lower()
        assert http.get("/ui/assets/main.js").status_code == 200


class TestDeferredUpdates:
    def test_updates_flush_every_k_selections(self, model_path, quick_corpus):
        service = CompletionService(
            load_model(model_path), online=OnlineConfig(lr=10.0), defer_updates=3
        )
        http = TestClient(build_app(service))
        uid = http.post("/users").json()["user_id"]
        query = quick_corpus.pool_a[0]
        row0 = service.users.row(uid)
        http.post("/select", json={"user_id": uid, "query": query})
        http.post("/select", json={"user_id": uid, "query": query})
        assert np.array_equal(service.users.row(uid), row0)
        assert service.users.version(uid) == 0
        http.post("/select", json={"user_id": uid, "query": query})
        assert not np.array_equal(service.users.row(uid), row0)
        assert service.users.version(uid) == 3  # one bump per applied update
