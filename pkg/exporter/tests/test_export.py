import hashlib
import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from textembed.cli import main as cli_main
from textembed.encoders import HashedNgramEncoder, build_encoder
from textembed.export import ExportError, ExporterConfig, export

HERE = Path(__file__).parent
PRIMARY_FIXTURES = HERE.parent.parent / "tests" / "fixtures"
FIXTURE_CORPUS = PRIMARY_FIXTURES / "scannet20_corpus.json"
FIXTURE_EMBEDDINGS = PRIMARY_FIXTURES / "scannet20_embeddings.json"


def small_corpus(tmp_path: Path) -> Path:
    doc = {
        "schema_version": 1,
        "categories": [
            {
                "name": "chair",
                "descriptions": [
                    "The point cloud of a chair.",
                    "A chair is a seat with a backrest and four legs.",
                ],
                "source_tags": ["template", "generated"],
            },
            {
                "name": "table",
                "descriptions": [
                    "The point cloud of a table.",
                    "A table is a flat elevated surface on legs.",
                ],
                "source_tags": ["template", "generated"],
            },
        ],
    }
    path = tmp_path / "corpus.json"
    path.write_text(json.dumps(doc))
    return path


def config(corpus: Path, out: Path, dim: int = 64) -> ExporterConfig:
    return ExporterConfig(
        model_id="hashed-ngram", corpus_path=corpus, output_path=out, dim=dim
    )


class TestHashedEncoder:
    def test_deterministic_per_text(self):
        enc = HashedNgramEncoder(dim=32)
        a = enc.encode_one("A chair is a seat.")
        b = HashedNgramEncoder(dim=32).encode_one("A chair is a seat.")
        np.testing.assert_array_equal(a, b)

    def test_independent_of_numpy_rng_state(self):
        enc = HashedNgramEncoder(dim=32)
        np.random.seed(1)
        a = enc.encode_one("a wooden table")
        np.random.seed(999)
        b = HashedNgramEncoder(dim=32).encode_one("a wooden table")
        np.testing.assert_array_equal(a, b)

    def test_related_texts_more_similar_than_unrelated(self):
        enc = HashedNgramEncoder(dim=256)
        chair1 = enc.encode_one("A chair is a seat with a backrest.")
        chair2 = enc.encode_one("The chair has four legs and a backrest.")
        sink = enc.encode_one("A sink is a basin with a faucet for washing.")

        def cos(u, v):
            return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

        assert cos(chair1, chair2) > cos(chair1, sink)

    def test_stemming_folds_plurals(self):
        enc = HashedNgramEncoder(dim=128)
        single = enc.encode_one("chair")
        plural = enc.encode_one("chairs")
        np.testing.assert_array_equal(single, plural)

    def test_build_encoder_dispatch(self):
        enc = build_encoder("hashed-ngram", dim=16)
        assert isinstance(enc, HashedNgramEncoder)
        assert enc.dim == 16


class TestExport:
    def test_writes_aligned_rows(self, tmp_path):
        corpus = small_corpus(tmp_path)
        out = tmp_path / "emb.json"
        export(config(corpus, out))
        doc = json.loads(out.read_text())
        assert doc["dim"] == 64
        assert doc["dtype"] == "f32"
        assert [c["name"] for c in doc["categories"]] == ["chair", "table"]
        assert all(len(c["vectors"]) == 2 for c in doc["categories"])
        assert doc["metadata"]["encoder"] == "hashed-ngram"
        assert doc["metadata"]["rows"] == 4
        # rows are category-major, description-minor, exactly as encoded
        first = HashedNgramEncoder(dim=64).encode_one("The point cloud of a chair.")
        stored = np.array(doc["categories"][0]["vectors"][0])
        np.testing.assert_array_equal(stored.astype(np.float32), first.astype(np.float32))

    def test_reexport_is_byte_identical(self, tmp_path):
        corpus = small_corpus(tmp_path)
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        export(config(corpus, out1))
        export(config(corpus, out2))
        assert out1.read_bytes() == out2.read_bytes()

    def test_empty_corpus_rejected_no_file(self, tmp_path):
        corpus = tmp_path / "empty.json"
        corpus.write_text(json.dumps({"schema_version": 1, "categories": []}))
        out = tmp_path / "emb.json"
        with pytest.raises(ExportError, match="no categories"):
            export(config(corpus, out))
        assert not out.exists()

    def test_missing_corpus(self, tmp_path):
        with pytest.raises(ExportError, match="no such"):
            export(config(tmp_path / "nope.json", tmp_path / "emb.json"))

    def test_rows_written_unnormalized(self, tmp_path):
        corpus = small_corpus(tmp_path)
        out = tmp_path / "emb.json"
        export(config(corpus, out))
        doc = json.loads(out.read_text())
        norms = [
            np.linalg.norm(np.array(row))
            for cat in doc["categories"]
            for row in cat["vectors"]
        ]
        assert any(abs(n - 1.0) > 1e-3 for n in norms)


class TestPrimaryFixtureContract:
    def test_fixture_digest_matches_reexport(self, tmp_path):
        out = tmp_path / "regenerated.json"
        code = cli_main([
            "export", "--model", "hashed-ngram", "--dim", "512",
            "--corpus", str(FIXTURE_CORPUS), "--out", str(out),
        ])
        assert code == 0
        fresh = hashlib.sha256(out.read_bytes()).hexdigest()
        pinned = hashlib.sha256(FIXTURE_EMBEDDINGS.read_bytes()).hexdigest()
        assert fresh == pinned

    def test_primary_validate_reports_no_violations(self):
        textsup = shutil.which("textsup")
        if textsup is None:
            pytest.skip("primary CLI not installed")
        proc = subprocess.run(
            [
                textsup, "validate",
                "--corpus", str(FIXTURE_CORPUS),
                "--embeddings", str(FIXTURE_EMBEDDINGS),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "ok" in proc.stdout


class TestClipPath:
    def test_clip_encoder_if_checkpoint_available(self, tmp_path, monkeypatch):
        torch = pytest.importorskip("torch")
        pytest.importorskip("transformers")
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")  # cache only, never the network
        try:
            from textembed.encoders import ClipTextEncoder

            enc = ClipTextEncoder("openai/clip-vit-base-patch32")
        except Exception as exc:
            pytest.skip(f"no local CLIP checkpoint: {type(exc).__name__}")
        rows = enc.encode(["a photo of a chair", "a photo of a table"])
        assert rows.shape == (2, enc.dim)


class TestCli:
    def test_export_subcommand(self, tmp_path):
        corpus = small_corpus(tmp_path)
        out = tmp_path / "emb.json"
        code = cli_main([
            "export", "--model", "hashed-ngram", "--dim", "32",
            "--corpus", str(corpus), "--out", str(out),
        ])
        assert code == 0
        assert out.exists()

    def test_export_failure_exit_code(self, tmp_path):
        code = cli_main([
            "export", "--corpus", str(tmp_path / "missing.json"),
            "--out", str(tmp_path / "emb.json"),
        ])
        assert code == 2
