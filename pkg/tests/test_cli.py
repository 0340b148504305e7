import json
import shutil
from pathlib import Path

import numpy as np

from porecrit.cli import main
from porecrit.config import RunConfig
from porecrit.descriptors import FeatureMatrix
from porecrit.model import labels_to_csv
from porecrit.volume_io import SyntheticSpec, generate_synthetic_volume, write_stack

SMALL = {
    "synthetic": {"dims": [24, 48, 48], "pore_count": 30, "seed": 1},
    "model": {"n_trees": 20},
    "background_cap": 20,
}


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def small_config(tmp_path, **extra):
    doc = {**SMALL, **extra}
    return write_config(tmp_path, doc)


def run(*argv):
    return main(list(argv) + ["-q"])


def manifest(out):
    return json.loads((Path(out) / "MANIFEST.json").read_text())


# ---------------------------------------------------------------- synth

def test_synth_zero_pores_gives_empty_table(tmp_path):
    cfg = write_config(tmp_path, {"synthetic": {"dims": [8, 16, 16], "pore_count": 0}})
    assert run("synth", "--config", cfg, "--output-dir", str(tmp_path / "o")) == 0
    assert (tmp_path / "o" / "ground_truth.csv").read_text() == "pore_index,z,y,x,radius,voxel_count\n"
    assert len(list((tmp_path / "o" / "volume").glob("*.pgm"))) == 8


def test_synth_ten_pores_ten_rows(tmp_path):
    cfg = write_config(tmp_path, {"synthetic": {"dims": [16, 32, 32], "pore_count": 10}})
    assert run("synth", "--config", cfg, "--output-dir", str(tmp_path / "o")) == 0
    assert len((tmp_path / "o" / "ground_truth.csv").read_text().splitlines()) == 11


def test_synth_same_seed_same_bytes(tmp_path):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        assert run("synth", "--config", cfg, "--output-dir", str(tmp_path / name), "--seed", "5") == 0
    for f in sorted((tmp_path / "a" / "volume").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "volume" / f.name).read_bytes()
    assert (tmp_path / "a" / "ground_truth.csv").read_bytes() == (tmp_path / "b" / "ground_truth.csv").read_bytes()
    assert run("synth", "--config", cfg, "--output-dir", str(tmp_path / "c"), "--seed", "6") == 0
    assert (tmp_path / "a" / "ground_truth.csv").read_bytes() != (tmp_path / "c" / "ground_truth.csv").read_bytes()


# ---------------------------------------------------------------- config handling

def test_input_and_synthetic_together_is_config_error(tmp_path):
    cfg = write_config(tmp_path, {"input": {"path": str(tmp_path)}, "synthetic": {}})
    out = tmp_path / "o"
    assert run("pipeline", "--config", cfg, "--output-dir", str(out)) == 2
    assert not out.exists()


def test_unknown_key_and_bad_json(tmp_path):
    assert run("show-config", "--config", write_config(tmp_path, {"bogus": 1})) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("show-config", "--config", str(bad)) == 2
    assert run("show-config", "--config", str(tmp_path / "missing.json")) == 2


def test_bad_flag_values(tmp_path):
    assert run("show-config", "--percentile", "0") == 2
    assert run("show-config", "--surface-mode", "nope") == 2
    assert run("nonexistent-command") == 2


def test_config_round_trip():
    cfg = RunConfig().validate()
    assert RunConfig.from_json(cfg.to_json()) == cfg
    ext = RunConfig.from_dict({"input": {"path": "/x", "format": "raw"}, "labels": {"external": "/l.csv"}})
    assert ext.synthetic is None and ext.synthetic_labels is None
    assert RunConfig.from_json(ext.to_json()) == ext


def test_shipped_reference_config_matches_defaults():
    shipped = Path(__file__).parent.parent / "configs" / "reference.json"
    assert RunConfig.load(shipped) == RunConfig().validate()


def test_flags_override_config(tmp_path, capsys):
    cfg = write_config(tmp_path, {"segmentation": {"I_thr": 100}, "network": {"percentile": 5}})
    assert main(["show-config", "--config", cfg, "--threshold", "200", "--seed", "9",
                 "--surface-mode", "bbox_faces"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["segmentation"]["I_thr"] == 200
    assert doc["network"]["percentile"] == 5
    assert doc["surface_mode"] == "bbox_faces"
    seeds = [doc["synthetic"]["seed"], doc["labels"]["synthetic"]["seed"], doc["model"]["seed"],
             doc["split"]["seed"], doc["background_seed"]]
    assert seeds == [9] * 5


# ---------------------------------------------------------------- stages

OUTPUTS = ["ground_truth.csv", "labels.npy", "segmentation.json", "pores.csv", "features.csv",
           "network.json", "edges.csv", "network_yx.svg", "labels.csv", "model.json", "split.json",
           "metrics.json", "attributions.csv", "importance.csv", "beeswarm.svg", "importance.svg",
           "dependence_size.svg", "dependence_surface_distance.svg", "summary.txt"]


def test_stages_compose_to_the_pipeline(tmp_path):
    cfg = small_config(tmp_path)
    whole, staged = tmp_path / "whole", tmp_path / "staged"
    assert run("pipeline", "--config", cfg, "--output-dir", str(whole)) == 0
    for stage in ("synth", "segment", "features", "network", "train", "explain"):
        assert run(stage, "--config", cfg, "--output-dir", str(staged)) == 0, stage
    for name in OUTPUTS:
        assert (whole / name).read_bytes() == (staged / name).read_bytes(), name
    assert manifest(whole)["complete"] and manifest(staged)["complete"]


def test_segment_without_synth_generates_volume(tmp_path):
    out = tmp_path / "o"
    assert run("segment", "--config", small_config(tmp_path), "--output-dir", str(out)) == 0
    assert (out / "labels.npy").exists() and (out / "volume").is_dir()


def test_features_before_segment_is_data_error(tmp_path):
    out = tmp_path / "o"
    assert run("features", "--config", small_config(tmp_path), "--output-dir", str(out)) == 3
    assert manifest(out)["stages"]["features"]["state"] == "failed"


def test_external_pgm_input_with_external_labels(tmp_path):
    volume, _ = generate_synthetic_volume(SyntheticSpec(dims=(24, 48, 48), pore_count=30, seed=2))
    write_stack(volume, tmp_path / "stack")
    labels_path = tmp_path / "labels.csv"
    doc = {"input": {"path": str(tmp_path / "stack"), "format": "pgm"},
           "labels": {"external": str(labels_path)}, "model": {"n_trees": 20}, "background_cap": 20}
    cfg = write_config(tmp_path, doc)

    pre = tmp_path / "pre"
    assert run("segment", "--config", cfg, "--output-dir", str(pre)) == 0
    assert run("features", "--config", cfg, "--output-dir", str(pre)) == 0
    fm = FeatureMatrix.from_csv((pre / "features.csv").read_text())
    labels = np.linspace(0, 1, len(fm))
    labels_path.write_text(labels_to_csv(fm.pore_ids, labels))

    out = tmp_path / "out"
    assert run("pipeline", "--config", cfg, "--output-dir", str(out)) == 0
    m = manifest(out)
    assert m["stages"]["synth"] == "skipped" and m["complete"]
    assert (out / "labels.csv").read_text() == labels_path.read_text()
    assert json.loads((out / "model.json").read_text())["training_metadata"]["label_source"] == "external_csv"


def test_missing_input_is_data_error_and_recorded(tmp_path):
    (tmp_path / "empty").mkdir()
    doc = {"input": {"path": str(tmp_path / "empty")}}
    out = tmp_path / "o"
    assert run("pipeline", "--config", write_config(tmp_path, doc), "--output-dir", str(out)) == 3
    m = manifest(out)
    assert m["stages"]["segment"]["state"] == "failed" and not m["complete"]
    assert "NoSlices" in m["stages"]["segment"]["detail"]


def test_corrupt_slice_is_data_error(tmp_path):
    volume, _ = generate_synthetic_volume(SyntheticSpec(dims=(4, 16, 16), pore_count=0))
    write_stack(volume, tmp_path / "stack")
    first = sorted((tmp_path / "stack").glob("*.pgm"))[0]
    first.write_bytes(b"P2\n16 16\n255\n")
    doc = {"input": {"path": str(tmp_path / "stack")}}
    assert run("segment", "--config", write_config(tmp_path, doc), "--output-dir", str(tmp_path / "o")) == 3


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "pipeline" in capsys.readouterr().out
