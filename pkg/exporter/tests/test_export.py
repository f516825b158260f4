import csv

import numpy as np
import pytest
from PIL import Image

from fixture_exporter import HashedTeacher, export, read_manifest_csv
from fixture_exporter.export import ManifestError, main
from fixture_exporter.writer import ExportFormatError, write_fixture_file

# the core package is the reference validator for everything we write
from modalign.data import read_fixture, read_manifest
from modalign.encoders import FixtureTeacher
from modalign.errors import FixtureError


def make_inputs(tmp_path, n=3, text_for=None):
    rng = np.random.default_rng(7)
    rows = []
    for i in range(n):
        img_path = tmp_path / f"img{i}.png"
        Image.fromarray(rng.integers(0, 255, size=(24, 24, 3), dtype=np.uint8)).save(img_path)
        text = text_for(i) if text_for else f"sample text number {i} with some words"
        rows.append({"id": i, "text": text, "image_path": img_path.name, "label": i % 2})
    manifest = tmp_path / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "text", "image_path", "label"])
        writer.writeheader()
        writer.writerows(rows)
    return manifest


class TestExportConformance:
    def test_core_validator_accepts_export(self, tmp_path):
        manifest = make_inputs(tmp_path)
        out = tmp_path / "t.clfa"
        count = export(manifest, out, teacher_spec="hashed", expected_width=512)
        assert count == 3
        fixture = read_fixture(out)   # core parser; raises on any format violation
        assert fixture.width == 512
        assert not fixture.has_raw_inputs
        assert [r.id for r in fixture.records] == [0, 1, 2]

    def test_core_teacher_round_trips_bit_exactly(self, tmp_path):
        manifest = make_inputs(tmp_path)
        out = tmp_path / "t.clfa"
        export(manifest, out, teacher_spec="hashed")
        teacher = HashedTeacher()
        rows = read_manifest_csv(manifest)
        core_teacher = FixtureTeacher(read_fixture(out))
        for row in rows:
            got_t, got_i = core_teacher.embed(row["id"])
            want_t = teacher.embed_text(row["text"]).astype(np.float64)
            img = np.asarray(Image.open(tmp_path / f"img{row['id']}.png").convert("RGB"))
            want_i = teacher.embed_image(img).astype(np.float64)
            np.testing.assert_array_equal(got_t, want_t)
            np.testing.assert_array_equal(got_i, want_i)

    def test_sidecar_manifest_readable_by_core(self, tmp_path):
        manifest = make_inputs(tmp_path, n=4)
        export(manifest, tmp_path / "t.clfa")
        stats, labels = read_manifest(tmp_path / "manifest.txt")
        assert stats["train"]["total"] == 4
        assert labels == {0: 0, 1: 1, 2: 0, 3: 1}

    def test_idempotent_bytes(self, tmp_path):
        manifest = make_inputs(tmp_path)
        a, b = tmp_path / "a.clfa", tmp_path / "b.clfa"
        export(manifest, a)
        export(manifest, b)
        assert a.read_bytes() == b.read_bytes()

    def test_width_512_declared_and_honored(self, tmp_path):
        manifest = make_inputs(tmp_path, n=2)
        out = tmp_path / "t.clfa"
        export(manifest, out, expected_width=512)
        blob = out.read_bytes()
        declared = int.from_bytes(blob[9:13], "little")
        assert declared == 512
        assert read_fixture(out).records[0].text_embedding.shape == (512,)

    def test_width_mismatch_rejected(self, tmp_path):
        manifest = make_inputs(tmp_path, n=1)
        with pytest.raises(ManifestError):
            export(manifest, tmp_path / "t.clfa", expected_width=256)


class TestExportErrors:
    def test_over_length_text_truncates_with_warning(self, tmp_path):
        long_text = " ".join(f"w{i}" for i in range(100))
        manifest = make_inputs(tmp_path, n=1, text_for=lambda i: long_text)
        with pytest.warns(UserWarning, match="truncated"):
            export(manifest, tmp_path / "t.clfa")

    def test_duplicate_text_warns(self, tmp_path):
        manifest = make_inputs(tmp_path, n=2, text_for=lambda i: "same text twice")
        with pytest.warns(UserWarning, match="duplicate"):
            export(manifest, tmp_path / "t.clfa")

    def test_unreadable_image_is_error(self, tmp_path):
        manifest = make_inputs(tmp_path, n=1)
        (tmp_path / "img0.png").write_bytes(b"not a png")
        with pytest.raises(ManifestError, match="unreadable image"):
            export(manifest, tmp_path / "t.clfa")

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,text\n1,hello\n")
        with pytest.raises(ManifestError, match="missing columns"):
            read_manifest_csv(path)

    def test_non_finite_embedding_rejected_by_writer(self, tmp_path):
        with pytest.raises(ExportFormatError):
            write_fixture_file(tmp_path / "t.clfa",
                               [(0, np.full(4, np.nan), np.ones(4))])

    def test_cli_error_exit_code(self, tmp_path, capsys):
        assert main(["--manifest", str(tmp_path / "absent.csv"),
                     "--out", str(tmp_path / "t.clfa")]) == 1
        assert "error" in capsys.readouterr().err

    def test_cli_success(self, tmp_path, capsys):
        manifest = make_inputs(tmp_path)
        assert main(["--manifest", str(manifest), "--out", str(tmp_path / "t.clfa"),
                     "--width", "512"]) == 0


class TestWriterIndependence:
    def test_truncated_export_rejected_by_core(self, tmp_path):
        manifest = make_inputs(tmp_path, n=2)
        out = tmp_path / "t.clfa"
        export(manifest, out)
        out.write_bytes(out.read_bytes()[:-3])
        with pytest.raises(FixtureError):
            read_fixture(out)


def _clip_weights_cached() -> bool:
    try:
        from transformers.utils import cached_file

        cached_file("openai/clip-vit-base-patch32", "config.json", local_files_only=True)
        return True
    except Exception:
        return False


@pytest.mark.skipif(not _clip_weights_cached(),
                    reason="pretrained CLIP weights not in the local cache")
class TestClipBackend:
    def test_clip_export_declares_512(self, tmp_path):
        manifest = make_inputs(tmp_path, n=1)
        export(manifest, tmp_path / "t.clfa", teacher_spec="openai/clip-vit-base-patch32",
               expected_width=512)
        assert read_fixture(tmp_path / "t.clfa").width == 512
