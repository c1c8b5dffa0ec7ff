from __future__ import annotations

import json

import pytest

from ref_trainer.shapes import generate_shapes_dataset


@pytest.fixture(scope="session")
def shapes_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "shapes"
    generate_shapes_dataset(root, per_class=32, size=32, seed=0)
    return root


@pytest.fixture(scope="session")
def plugin_config_path(shapes_root, tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "plugin.json"
    path.write_text(json.dumps({"dataset_root": str(shapes_root), "image_size": 32, "seed": 0}))
    return path
