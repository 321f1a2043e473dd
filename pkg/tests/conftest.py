import json

import pytest

from facadekit.catalog import ingest_directory, save_catalog
from facadekit.fixtures import write_component_suite, write_fixture_house
from facadekit.retrieval import build_index

SERVICE_RENDER_SIZE = 256


@pytest.fixture(scope="session")
def service_env(tmp_path_factory):
    """Small catalog archive plus house fixtures shared by service/CLI tests."""
    root = tmp_path_factory.mktemp("service-env")
    components = root / "components"
    write_component_suite(components, count=10, seed=2)
    manifest = ingest_directory(components)
    index = build_index(manifest, views_per_component=3, codebook_k=64, seed=2)
    archive = root / "catalog.cmpcat"
    save_catalog(manifest, index, archive)

    house = root / "house"
    meta = write_fixture_house(house, size=SERVICE_RENDER_SIZE)
    return {
        "root": root,
        "components": components,
        "archive": archive,
        "manifest": manifest,
        "index": index,
        "house_dir": house,
        "house_meta": meta,
        "mapping_file": house / "mapping.json",
    }
