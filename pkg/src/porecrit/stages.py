"""Pipeline stages. Each stage reads the files its predecessor wrote into the output directory."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import descriptors, model as gbt, network as net, reporting, shapley
from .config import RunConfig
from .errors import FormatError, InvalidData, NoSlices
from .segmentation import LabelField, PoreRegion, SegmentationResult, component_voxels, segment
from .volume_io import Volume, generate_synthetic_volume, load_stack, write_stack

logger = logging.getLogger(__name__)

STAGES = ("synth", "segment", "features", "network", "train", "explain")
MANIFEST = "MANIFEST.json"


class Workspace:
    """File layout of one run's output directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def ensure(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> Path:
        p = self.root / name
        p.write_text(text, encoding="utf-8")
        return p

    def read_text(self, name: str) -> str:
        p = self.root / name
        if not p.exists():
            raise FormatError(f"{p} is missing; run the preceding stage first")
        return p.read_text(encoding="utf-8")

    def read_json(self, name: str) -> dict:
        return json.loads(self.read_text(name))

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    # MANIFEST -----------------------------------------------------------

    def manifest(self) -> dict:
        p = self.root / MANIFEST
        if p.exists():
            return json.loads(p.read_text(encoding="utf-8"))
        return {"stages": {}, "complete": False}

    def mark(self, stage: str, state: str, detail: str | None = None) -> None:
        m = self.manifest()
        m["stages"][stage] = state if detail is None else {"state": state, "detail": detail}
        m["complete"] = all(m["stages"].get(s) in ("complete", "skipped") for s in STAGES)
        self.write_json(MANIFEST, m)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def run_synth(cfg: RunConfig, ws: Workspace) -> None:
    if cfg.synthetic is None:
        raise InvalidData("synth needs a 'synthetic' spec in the config")
    volume, truth = generate_synthetic_volume(cfg.synthetic)
    vol_dir = ws / "volume"
    if vol_dir.exists():
        for old in vol_dir.glob("*.pgm"):
            old.unlink()
    write_stack(volume, vol_dir)
    ws.write_text("ground_truth.csv", truth.to_csv())
    logger.info("synth: %s volume, %d planted pores", volume.dims, len(truth.pores))


def _load_volume(cfg: RunConfig, ws: Workspace) -> Volume:
    if cfg.input is not None:
        return load_stack(cfg.input.path, cfg.input.format)
    try:
        return load_stack(ws / "volume", "pgm")
    except NoSlices:
        run_synth(cfg, ws)
        return load_stack(ws / "volume", "pgm")


def run_segment(cfg: RunConfig, ws: Workspace) -> None:
    volume = _load_volume(cfg, ws)
    label_field, result = segment(volume, cfg.segmentation)
    with open(ws / "labels.npy", "wb") as fh:
        np.save(fh, label_field.labels)
    ws.write_json("segmentation.json", {
        "dims": list(volume.dims),
        "config": cfg.segmentation.to_dict(),
        "n_components": label_field.n_components,
        "boundary_label": result.boundary_label,
        "boundary_size": result.boundary_size,
        "rejected_counts": result.rejected_counts,
        "warnings": result.warnings,
        "pore_labels": [p.label for p in result.pores],
        "pore_sizes": [p.voxel_count for p in result.pores],
    })
    if cfg.export_mask:
        mask = (label_field.labels > 0).astype(np.uint8) * 255
        write_stack(mask, ws / "mask", prefix="mask_")
    logger.info("segment: %d components, boundary %d voxels, %d pores retained",
                label_field.n_components, result.boundary_size, len(result.pores))


def _load_segmentation(ws: Workspace) -> tuple[LabelField, SegmentationResult, tuple[int, int, int]]:
    meta = ws.read_json("segmentation.json")
    p = ws / "labels.npy"
    if not p.exists():
        raise FormatError(f"{p} is missing; run the segment stage first")
    labels = np.load(p)
    sizes = np.bincount(labels.ravel())
    field_ = LabelField(labels, {i: int(sizes[i]) for i in range(1, len(sizes)) if sizes[i]})
    wanted = [int(k) for k in meta["pore_labels"]]
    voxels = component_voxels(labels, wanted) if wanted else {}
    result = SegmentationResult(
        pores=[PoreRegion(k, voxels[k]) for k in wanted],
        boundary_label=int(meta["boundary_label"]),
        boundary_size=int(meta["boundary_size"]),
        rejected_counts=meta["rejected_counts"],
        warnings=meta["warnings"],
    )
    return field_, result, tuple(meta["dims"])


def run_features(cfg: RunConfig, ws: Workspace) -> None:
    label_field, result, dims = _load_segmentation(ws)
    surface = descriptors.build_surface_model(result, dims, cfg.surface_mode, label_field=label_field)
    pores = descriptors.describe_pores(result, surface)
    fm = descriptors.assemble_features(pores)
    ws.write_text("pores.csv", descriptors.pores_to_csv(pores))
    fm.save(ws / "features.csv")
    logger.info("features: %d pores, surface normalizer %.4g (%s)", len(fm), surface.normalizer, surface.mode)


def _load_features(ws: Workspace) -> descriptors.FeatureMatrix:
    return descriptors.FeatureMatrix.from_csv(ws.read_text("features.csv"))


def run_network(cfg: RunConfig, ws: Workspace) -> None:
    fm = _load_features(ws)
    pores = descriptors.pores_from_csv(ws.read_text("pores.csv"), fm)
    network = net.build_network(pores, cfg.network)
    net.export_network(network, ws / "network.json", "json_nodelink")
    net.export_network(network, ws / "edges.csv", "csv_edges")
    for plane in reporting.PLANES:
        ws.write_text(f"network_{plane}.svg", reporting.render_projection_svg(network, plane))
    logger.info("network: %d nodes, %d of %d pairs connected (d_thr %.4g)",
                len(network.nodes), len(network.edges), network.n_pairs, network.d_thr)


def _labels_for(cfg: RunConfig, fm: descriptors.FeatureMatrix) -> tuple[np.ndarray, str]:
    if cfg.external_labels is not None:
        text = Path(cfg.external_labels).read_text(encoding="utf-8")
        return gbt.labels_from_csv(text, fm.pore_ids), "external_csv"
    return gbt.synth_labels(fm, cfg.synthetic_labels), "synthetic"


def run_train(cfg: RunConfig, ws: Workspace) -> None:
    fm = _load_features(ws)
    labels, source = _labels_for(cfg, fm)
    ws.write_text("labels.csv", gbt.labels_to_csv(fm.pore_ids, labels))
    dataset = gbt.LabeledDataset(fm, labels, source)
    train_idx, test_idx = gbt.split_indices(len(dataset), cfg.split.train_fraction, cfg.split.seed)
    model = gbt.train_gbt(dataset.subset(train_idx), cfg.model)
    model.training_metadata.update({
        "train_indices": train_idx.tolist(),
        "test_indices": test_idx.tolist(),
        "split_seed": cfg.split.seed,
        "label_source": source,
    })
    model.save(ws / "model.json")
    ws.write_json("split.json", {
        "train_fraction": cfg.split.train_fraction,
        "seed": cfg.split.seed,
        "train_indices": train_idx.tolist(),
        "test_indices": test_idx.tolist(),
        "train_pore_ids": fm.pore_ids[train_idx].tolist(),
        "test_pore_ids": fm.pore_ids[test_idx].tolist(),
    })
    metrics = (gbt.evaluate(model, dataset.subset(test_idx)) if len(test_idx)
               else gbt.Metrics(float("nan"), float("nan"), True))
    ws.write_json("metrics.json", {
        "rmse": metrics.rmse,
        "r_squared": None if metrics.r_squared_undefined else metrics.r_squared,
        "r_squared_undefined": metrics.r_squared_undefined,
        "n_train": int(len(train_idx)),
        "n_test": int(len(test_idx)),
    })
    logger.info("train: %d trees, test rmse %.4g, r^2 %s", len(model.trees), metrics.rmse,
                "undefined" if metrics.r_squared_undefined else f"{metrics.r_squared:.4f}")


def run_explain(cfg: RunConfig, ws: Workspace) -> None:
    fm = _load_features(ws)
    model = gbt.ModelArtifact.load(ws / "model.json")
    split = ws.read_json("split.json")
    labels = gbt.labels_from_csv(ws.read_text("labels.csv"), fm.pore_ids)
    train_idx = np.asarray(split["train_indices"], dtype=np.int64)
    test_set = set(split["test_indices"])

    background = shapley.select_background(fm.rows[train_idx], cfg.background_cap, cfg.background_seed)
    attributions = shapley.exact_shapley(model, fm.rows, background)
    importance = shapley.mean_abs_importance(attributions)

    ws.write_text("attributions.csv", attributions.to_csv(fm.pore_ids))
    ws.write_text("importance.csv", importance.to_csv())
    pred_lines = ["pore_id,partition,label,prediction"]
    for k, (pid, y, p) in enumerate(zip(fm.pore_ids, labels, attributions.predictions)):
        pred_lines.append(f"{int(pid)},{'test' if k in test_set else 'train'},{float(y)!r},{float(p)!r}")
    ws.write_text("predictions.csv", "\n".join(pred_lines) + "\n")

    bees = shapley.beeswarm_data(attributions, fm)
    ws.write_text("beeswarm.csv", shapley.beeswarm_to_csv(bees))
    order = list(importance.ranking)
    ws.write_text("importance.svg", reporting.render_bar_svg(
        importance, reporting.PlotSpec(kind="bar", title="Feature importance", x_label="mean |SHAP value|")))
    ws.write_text("importance_log.svg", reporting.render_bar_svg(
        importance, reporting.PlotSpec(kind="bar", title="Feature importance (log scale)",
                                       x_label="mean |SHAP value|", log_x=True)))
    ranked = [r for name in order for r in bees if r.feature == name]
    ws.write_text("beeswarm.svg", reporting.render_scatter_svg(
        reporting.beeswarm_points(ranked, order),
        reporting.PlotSpec(kind="beeswarm", height=360, title="SHAP beeswarm", x_label="SHAP value",
                           categories=tuple(order))))
    for feature in ("size", "surface_distance"):
        recs = shapley.dependence_data(feature, attributions, fm)
        ws.write_text(f"dependence_{feature}.csv", shapley.dependence_to_csv(recs))
        ws.write_text(f"dependence_{feature}.svg", reporting.render_scatter_svg(
            reporting.dependence_points(recs),
            reporting.PlotSpec(kind="scatter", color_map="viridis_like",
                               title=f"{feature} vs predicted criticality",
                               x_label=feature, y_label="predicted criticality")))

    metrics = ws.read_json("metrics.json")
    seg = ws.read_json("segmentation.json") if (ws / "segmentation.json").exists() else {}
    network_meta = ws.read_json("network.json")["metadata"] if (ws / "network.json").exists() else {}
    summary = reporting.RunSummary(
        pores=len(fm),
        boundary_size=seg.get("boundary_size"),
        network_nodes=network_meta.get("n_nodes"),
        network_edges=network_meta.get("n_edges"),
        network_pairs=network_meta.get("n_pairs"),
        distance_threshold=network_meta.get("d_thr"),
        n_train=metrics.get("n_train"),
        n_test=metrics.get("n_test"),
        rmse=metrics.get("rmse"),
        r_squared=metrics.get("r_squared"),
        importance=importance,
        extra={"background_rows": attributions.background_size, "base_value": attributions.base_value},
    )
    ws.write_text("summary.txt", reporting.render_summary(summary))
    logger.info("explain: ranking %s, dominance %.3g", ", ".join(order), importance.dominance_factor)


RUNNERS = {
    "synth": run_synth,
    "segment": run_segment,
    "features": run_features,
    "network": run_network,
    "train": run_train,
    "explain": run_explain,
}


def run_stage(name: str, cfg: RunConfig) -> Workspace:
    ws = Workspace(cfg.output_dir)
    ws.ensure()
    ws.mark(name, "running")
    try:
        RUNNERS[name](cfg, ws)
    except Exception as exc:
        ws.mark(name, "failed", f"{type(exc).__name__}: {exc}")
        raise
    ws.mark(name, "complete")
    return ws


def pipeline_stages(cfg: RunConfig) -> list[str]:
    return [s for s in STAGES if s != "synth" or cfg.synthetic is not None]


def run_pipeline(cfg: RunConfig) -> Workspace:
    ws = Workspace(cfg.output_dir)
    ws.ensure()
    (ws / MANIFEST).unlink(missing_ok=True)
    ws.write_text("config.json", cfg.to_json())
    if cfg.synthetic is None:
        ws.mark("synth", "skipped")
    for name in pipeline_stages(cfg):
        run_stage(name, cfg)
    return ws
