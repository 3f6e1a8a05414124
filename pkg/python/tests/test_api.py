"""
DeskMT: API Tests
=================
Integration tests for the translation server endpoints.

Author: DeskMT Testing Team
Date: 2026-02-14
"""

import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from api import serve
from config import ServerSettings
from errors import ConfigurationError


def test_health_check(client):
    """Test health reports the loaded model and default beam"""
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "model": "tiny", "beam": 2}


def test_translate_matches_translator(client, translator):
    """Test the endpoint returns what the translator produces, in order"""
    text = ["a b c", "", "e d"]
    response = client.post("/translate", json={"text": text})
    assert response.status_code == 200
    assert response.json()["translations"] == translator.translate(text)


def test_translate_overrides(client, translator):
    """Test per-request beam and alpha are honored"""
    response = client.post("/translate", json={"text": ["c a"], "beam": 1, "alpha": 0.5})
    assert response.status_code == 200
    assert response.json()["translations"] == translator.translate(["c a"], beam_size=1, alpha=0.5)


def test_empty_batch(client):
    """Test an empty list returns an empty list"""
    response = client.post("/translate", json={"text": []})
    assert response.status_code == 200
    assert response.json() == {"translations": []}


def test_batch_too_large(client):
    """Test batches above max_batch are rejected with 413"""
    response = client.post("/translate", json={"text": ["a"] * 5})
    assert response.status_code == 413
    data = response.json()
    assert data["error"] is True
    assert "exceeds the limit of 4" in data["detail"]


@pytest.mark.parametrize("body", [
    {"text": ["a b"], "unexpected": 1},
    {"text": ["a\x00b"]},
    {"text": ["a b"], "beam": 0},
    {"text": ["a b"], "alpha": -1},
    {"sentences": ["a b"]},
    {"text": "a b c"},
])
def test_invalid_requests(client, body):
    """Test malformed bodies are client errors"""
    response = client.post("/translate", json=body)
    assert response.status_code == 400
    data = response.json()
    assert data["status_code"] == 400
    assert data["detail"].startswith("Invalid request")


def test_tab_allowed(client):
    """Test tabs are accepted as separators"""
    assert client.post("/translate", json={"text": ["a\tb"]}).status_code == 200


def test_metrics_endpoint(client):
    """Test Prometheus metrics are exposed"""
    client.get("/health")
    response = client.get("/metrics")
    assert response.status_code == 200
    assert "http_request" in response.text


def test_serve_requires_models():
    """Test serve refuses to start without models and vocabularies"""
    with pytest.raises(ConfigurationError):
        serve(ServerSettings(_env_file=None, models=[]))


@pytest.mark.slow
def test_concurrent_requests(client, translator):
    """Test 16 concurrent requests get the same answers as sequential decoding"""
    inputs = [["a b c", "d e"], ["c a"], ["e b", "a"], ["b c d e"]] * 4
    expected = [translator.translate(text) for text in inputs]

    def post(text):
        return client.post("/translate", json={"text": text}).json()["translations"]

    with ThreadPoolExecutor(max_workers=16) as pool:
        results = list(pool.map(post, inputs))
    assert results == expected
