"""Run configuration: one JSON document, flags override scalar fields."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .descriptors import SURFACE_MODES
from .errors import ConfigError
from .model import GbtHyperparams, SyntheticLabelParams
from .network import NetworkConfig
from .segmentation import SegmentationConfig
from .volume_io import SyntheticSpec


def reference_synthetic_spec() -> SyntheticSpec:
    """Desk-scale stand-in for the CT specimen: 500 pores planted in a shell bore."""
    return SyntheticSpec(
        dims=(96, 128, 128),
        shell_inner_radius_fraction=0.85,
        shell_intensity=255,
        pore_count=500,
        pore_radius_range=(1.5, 3.0),
        pore_intensity=255,
        radial_bias=0.6,
        background_intensity=40,
        seed=0,
    )


@dataclass(frozen=True)
class InputSpec:
    path: str
    format: str = "pgm"


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    input: InputSpec | None = None
    synthetic: SyntheticSpec | None = field(default_factory=reference_synthetic_spec)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    surface_mode: str = "boundary_component"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    external_labels: str | None = None
    synthetic_labels: SyntheticLabelParams | None = field(default_factory=SyntheticLabelParams)
    model: GbtHyperparams = field(default_factory=GbtHyperparams)
    split: SplitSpec = field(default_factory=SplitSpec)
    background_cap: int = 200
    background_seed: int = 0
    export_mask: bool = False
    output_dir: str = "porecrit-out"

    def validate(self) -> "RunConfig":
        if (self.input is None) == (self.synthetic is None):
            raise ConfigError("exactly one of 'input' and 'synthetic' must be given")
        if (self.external_labels is None) == (self.synthetic_labels is None):
            raise ConfigError("exactly one label source ('labels.external' or 'labels.synthetic') must be given")
        if self.input is not None and self.input.format not in ("pgm", "raw"):
            raise ConfigError(f"input.format must be 'pgm' or 'raw', got {self.input.format!r}")
        if self.surface_mode not in SURFACE_MODES:
            raise ConfigError(f"surface_mode must be one of {SURFACE_MODES}")
        if not 0.0 < self.split.train_fraction < 1.0:
            raise ConfigError("split.train_fraction must lie in (0, 1)")
        if self.background_cap < 1:
            raise ConfigError("background_cap must be >= 1")
        return self

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "input": None if self.input is None else asdict(self.input),
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "segmentation": self.segmentation.to_dict(),
            "surface_mode": self.surface_mode,
            "network": self.network.to_dict(),
            "labels": (
                {"external": self.external_labels} if self.external_labels is not None
                else {"synthetic": asdict(self.synthetic_labels)}
            ),
            "model": asdict(self.model),
            "split": asdict(self.split),
            "background_cap": self.background_cap,
            "background_seed": self.background_seed,
            "export_mask": self.export_mask,
            "output_dir": self.output_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"input", "synthetic", "segmentation", "surface_mode", "network", "labels", "model",
                 "split", "background_cap", "background_seed", "export_mask", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            base = cls()
            labels = d.get("labels")
            if labels is None:
                ext, syn = base.external_labels, base.synthetic_labels
            else:
                if set(labels) - {"external", "synthetic"}:
                    raise ConfigError(f"unknown label keys: {sorted(set(labels) - {'external', 'synthetic'})}")
                ext = labels.get("external")
                syn = labels.get("synthetic")
                syn = None if syn is None else SyntheticLabelParams(**syn)
            has_input = d.get("input") is not None
            synthetic = d.get("synthetic", None if has_input else base.synthetic.to_dict())
            return cls(
                input=InputSpec(**d["input"]) if has_input else None,
                synthetic=None if synthetic is None else SyntheticSpec.from_dict(synthetic),
                segmentation=SegmentationConfig(**d.get("segmentation", {})),
                surface_mode=d.get("surface_mode", base.surface_mode),
                network=NetworkConfig(**d.get("network", {})),
                external_labels=ext,
                synthetic_labels=syn,
                model=GbtHyperparams(**d.get("model", {})),
                split=SplitSpec(**d.get("split", {})),
                background_cap=int(d.get("background_cap", base.background_cap)),
                background_seed=int(d.get("background_seed", base.background_seed)),
                export_mask=bool(d.get("export_mask", base.export_mask)),
                output_dir=str(d.get("output_dir", base.output_dir)),
            ).validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    # -- flag overrides ----------------------------------------------------

    def with_overrides(self, *, output_dir=None, seed=None, threshold=None, percentile=None,
                       surface_mode=None) -> "RunConfig":
        """Apply command-line overrides; ``seed`` replaces every named seed."""
        cfg = self
        try:
            if output_dir is not None:
                cfg = replace(cfg, output_dir=str(output_dir))
            if threshold is not None:
                cfg = replace(cfg, segmentation=replace(cfg.segmentation, I_thr=int(threshold)))
            if percentile is not None:
                cfg = replace(cfg, network=replace(cfg.network, percentile=float(percentile)))
            if surface_mode is not None:
                cfg = replace(cfg, surface_mode=surface_mode)
            if seed is not None:
                seed = int(seed)
                cfg = replace(
                    cfg,
                    synthetic=None if cfg.synthetic is None else replace(cfg.synthetic, seed=seed),
                    synthetic_labels=(None if cfg.synthetic_labels is None
                                      else replace(cfg.synthetic_labels, seed=seed)),
                    model=replace(cfg.model, seed=seed),
                    split=replace(cfg.split, seed=seed),
                    background_seed=seed,
                )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()
