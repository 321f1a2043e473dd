import numpy as np
import pytest

from facadekit import PointCloud, fit_obb
from facadekit.catalog import (
    ingest_directory,
    load_catalog,
    load_component_mesh,
    save_catalog,
)
from facadekit.errors import (
    DanglingReferenceWarning,
    DirectoryUnreadable,
    UnsupportedFormat,
    UnsupportedVersion,
)
from facadekit.fixtures import write_component_suite
from facadekit.retrieval import build_index


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("components")
    write_component_suite(path, count=8, seed=3)
    return path


@pytest.fixture(scope="module")
def small_catalog(suite_dir):
    manifest = ingest_directory(suite_dir)
    index = build_index(manifest, views_per_component=2, codebook_k=32, seed=1)
    return manifest, index


class TestIngest:
    def test_counts_and_categories(self, suite_dir):
        manifest = ingest_directory(suite_dir)
        assert len(manifest.records) == 8
        assert manifest.ingest_errors == []
        categories = {r.category for r in manifest.records}
        assert categories == {"window", "door"}

    def test_corrupt_file_recorded_not_fatal(self, tmp_path):
        write_component_suite(tmp_path, count=2, seed=0)
        (tmp_path / "broken.glb").write_bytes(b"glTF junk that is not a container")
        manifest = ingest_directory(tmp_path)
        assert len(manifest.records) == 2
        assert len(manifest.ingest_errors) == 1
        assert manifest.ingest_errors[0][0] == "broken.glb"

    def test_canonical_obb_centered(self, suite_dir):
        manifest = ingest_directory(suite_dir)
        for record in manifest.records:
            assert np.allclose(record.canonical_obb.center, 0.0, atol=1e-9)
            assert np.allclose(record.canonical_obb.axes, np.eye(3), atol=1e-9)

    def test_ids_follow_path_order(self, suite_dir):
        manifest = ingest_directory(suite_dir)
        paths = [r.file_path for r in manifest.records]
        assert paths == sorted(paths)
        assert [r.id for r in manifest.records] == list(range(len(paths)))

    def test_deterministic(self, suite_dir):
        a = ingest_directory(suite_dir)
        b = ingest_directory(suite_dir)
        for ra, rb in zip(a.records, b.records):
            assert ra.id == rb.id and ra.file_path == rb.file_path
            assert np.array_equal(ra.canonical_obb.half_extents,
                                  rb.canonical_obb.half_extents)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DirectoryUnreadable):
            ingest_directory(tmp_path / "absent")

    def test_canonical_mesh_refits_to_origin(self, suite_dir, small_catalog):
        manifest, _ = small_catalog
        mesh = load_component_mesh(manifest, manifest.records[0])
        obb = fit_obb(PointCloud(mesh.positions))
        assert np.allclose(obb.center, 0.0, atol=1e-9)
        assert np.allclose(
            obb.half_extents, manifest.records[0].canonical_obb.half_extents,
            atol=1e-9)


class TestArchive:
    def test_save_load_round_trip(self, small_catalog, tmp_path):
        manifest, index = small_catalog
        path = tmp_path / "catalog.cmpcat"
        save_catalog(manifest, index, path)
        loaded_manifest, loaded_index = load_catalog(path)
        assert len(loaded_manifest.records) == len(manifest.records)
        for a, b in zip(manifest.records, loaded_manifest.records):
            assert (a.id, a.name, a.category, a.file_path, a.tags) == \
                (b.id, b.name, b.category, b.file_path, b.tags)
            assert np.allclose(a.canonical_obb.half_extents,
                               b.canonical_obb.half_extents)
        assert loaded_index.view_counts == index.view_counts

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bogus.cmpcat"
        path.write_bytes(b"NOTACAT" + b"\x00" * 64)
        with pytest.raises(UnsupportedFormat):
            load_catalog(path)

    def test_unsupported_version(self, small_catalog, tmp_path):
        import json
        import struct

        manifest, index = small_catalog
        path = tmp_path / "catalog.cmpcat"
        save_catalog(manifest, index, path)
        data = bytearray(path.read_bytes())
        (mlen,) = struct.unpack_from("<I", data, 8)
        doc = json.loads(bytes(data[12 : 12 + mlen]))
        doc["version"] = 99
        new_manifest = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        rebuilt = (bytes(data[:8]) + struct.pack("<I", len(new_manifest))
                   + new_manifest + bytes(data[12 + mlen :]))
        path.write_bytes(rebuilt)
        with pytest.raises(UnsupportedVersion):
            load_catalog(path)

    def test_dangling_reference_warns(self, small_catalog, tmp_path):
        manifest, index = small_catalog
        path = tmp_path / "catalog.cmpcat"
        save_catalog(manifest, index, path)
        victim = manifest.records[0].file_path
        source = __import__("pathlib").Path(manifest.source_root) / victim
        backup = source.read_bytes()
        source.unlink()
        try:
            with pytest.warns(DanglingReferenceWarning):
                load_catalog(path)
        finally:
            source.write_bytes(backup)
