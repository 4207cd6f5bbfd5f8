"""Experiment configuration, single runs, and comparison sweeps.

Configs are flat key=value text files (diff-friendly); every run emits
one CSV row in a fixed schema plus a JSON sidecar containing the fully
resolved config, so any row is reconstructible.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict, replace
from pathlib import Path


from . import constants as C
from . import data as D
from . import losses as LS
from . import trainer as T
from .graph import build_network, Network

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "RESULT_FIELDS",
    "run_experiment",
    "sweep",
    "append_rows",
    "write_pivot",
    "SWEEP_AXES",
]

RESULT_FIELDS = ("version", "structure", "normalization", "loss", "desk_scale",
                 "seed", "top1", "param_count", "wall_s", "paper_ref_top1")

STRUCTURES = ("plain", "residual", "alpha")
NORMALIZATIONS = ("log", "zscore", "alpha")
VERSIONS = ("v1", "v2", "v3", "v4")
EVAL_MODES = ("single", "ten_crop", "multi_scale")
SWEEP_AXES = {
    "structure": STRUCTURES,
    "loss": LS.LOSS_KINDS,
    "normalization": NORMALIZATIONS,
}


@dataclass
class ExperimentConfig:
    dataset: str = ""
    dataset_format: str = "idx-like"
    version: str = "v1"
    structure: str = "alpha"
    normalization: str = "zscore"
    loss: str = "am_softmax_linear"
    loss_s: float = 30.0
    loss_m: float = 0.35
    loss_a: float | None = None
    loss_c: float | None = None
    linear_mode: str = "calibrated"
    eval_mode: str = "single"
    scales: tuple = (32, 64, 128)
    crop_size: int = 0  # 0 = derive from image size
    desk_scale: int = 16
    base_ch: int = 8
    p_extra: float = 0.25
    combined_kernels: tuple[int, int] = (5, 10)
    downsample_by: str = ""  # "" = structure default
    lambda_aux: float = 0.3
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    accumulation_factor: int = 1
    max_epochs: int = 20
    plateau_epsilon: float = 1e-3
    plateau_patience: int = 5
    max_reductions: int = 3
    seed: int = 0
    dtype: str = "float32"
    augment: bool = False
    target_val_error: float | None = None
    out: str = "results"

    def validate(self):
        if self.version not in VERSIONS:
            raise ValueError(f"unknown version {self.version!r}")
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.loss not in LS.LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.eval_mode not in EVAL_MODES:
            raise ValueError(f"unknown eval_mode {self.eval_mode!r}")
        self.loss_config()

    def loss_config(self) -> LS.LossConfig:
        if self.linear_mode == "fixed" and self.loss == "am_softmax_linear":
            return LS.LossConfig.fixed(s=self.loss_s, m=self.loss_m,
                                       a=self.loss_a, c=self.loss_c or 0.0)
        return LS.LossConfig(kind=self.loss, s=self.loss_s, m=self.loss_m,
                             a=self.loss_a, c=self.loss_c, linear_mode=self.linear_mode)

    def train_config(self) -> T.TrainConfig:
        aug = D.AugmentConfig() if self.augment else None
        return T.TrainConfig(
            lr0=self.lr0, momentum=self.momentum, weight_decay=self.weight_decay,
            batch_size=self.batch_size, accumulation_factor=self.accumulation_factor,
            max_epochs=self.max_epochs, plateau_epsilon=self.plateau_epsilon,
            plateau_patience=self.plateau_patience, max_reductions=self.max_reductions,
            lambda_aux=self.lambda_aux, loss=self.loss_config(), seed=self.seed,
            dtype=self.dtype, augment=aug, target_val_error=self.target_val_error,
        )

    # -- flat key=value round trip --------------------------------------

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = ""
            elif isinstance(value, bool):
                value = int(value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        defaults = cls()
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed config line {line!r}")
            kv[key.strip()] = value.strip()
        values = {}
        for key, default in asdict(defaults).items():
            if key not in kv:
                continue
            raw = kv.pop(key)
            if key in ("scales", "combined_kernels"):
                values[key] = tuple(int(v) for v in raw.split(",")) if raw else ()
            elif key == "augment":
                values[key] = bool(int(raw))
            elif key in ("loss_a", "loss_c", "target_val_error"):
                values[key] = float(raw) if raw else None
            elif isinstance(default, bool):
                values[key] = bool(int(raw))
            elif isinstance(default, int):
                values[key] = int(raw)
            elif isinstance(default, float):
                values[key] = float(raw)
            else:
                values[key] = raw
        if kv:
            raise ValueError(f"unknown config keys: {sorted(kv)}")
        return cls(**values)


@dataclass
class ResultRow:
    version: str
    structure: str
    normalization: str
    loss: str
    desk_scale: int
    seed: int
    top1: float
    param_count: int
    wall_s: float
    paper_ref_top1: float | None = None

    def as_csv_dict(self):
        d = asdict(self)
        if d["paper_ref_top1"] is None:
            d["paper_ref_top1"] = ""
        return d


def _load_splits(cfg: ExperimentConfig):
    root = Path(cfg.dataset)
    if not root.exists():
        raise FileNotFoundError(f"dataset path {root} does not exist")
    train_dir = root / "train"
    if not train_dir.exists():
        train_dir = root
    train = D.load_dataset(train_dir, cfg.dataset_format, split="train")
    val_dir = root / "val"
    if val_dir.exists():
        val = D.load_dataset(val_dir, cfg.dataset_format, split="val")
    else:
        val = D.Dataset("val", list(train.samples), train.class_count, train.source)
    return train, val


def run_experiment(cfg: ExperimentConfig, reference_axis: str = "structure") -> ResultRow:
    """build -> train -> evaluate -> ResultRow; deterministic in cfg.seed."""
    cfg.validate()
    t0 = time.perf_counter()
    train_ds, val_ds = _load_splits(cfg)
    train_ds, stats = D.normalize_dataset(train_ds, cfg.normalization)
    val_ds, _ = D.normalize_dataset(val_ds, cfg.normalization, stats=stats)

    spec, params, buffers = build_network(
        cfg.version, cfg.structure, num_classes=train_ds.class_count, seed=cfg.seed,
        desk_scale=cfg.desk_scale, base_ch=cfg.base_ch, in_ch=train_ds.samples[0][0].shape[0],
        p_extra=cfg.p_extra, combined_kernels=cfg.combined_kernels,
        downsample_by=cfg.downsample_by or None)
    net = Network(spec, params, buffers)
    tcfg = cfg.train_config()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    T.train(net, train_ds, val_ds, tcfg, out_dir=out_dir)
    kwargs = {}
    if cfg.eval_mode == "ten_crop" and cfg.crop_size:
        kwargs["crop_size"] = cfg.crop_size
    if cfg.eval_mode == "multi_scale":
        kwargs["scales"] = list(cfg.scales)
    top1 = T.evaluate_top1(net, val_ds, tcfg.loss, eval_mode=cfg.eval_mode, **kwargs)
    wall = time.perf_counter() - t0
    axis_value = {"structure": cfg.structure, "loss": cfg.loss,
                  "normalization": cfg.normalization}[reference_axis]
    row = ResultRow(
        version=cfg.version, structure=cfg.structure, normalization=cfg.normalization,
        loss=cfg.loss, desk_scale=cfg.desk_scale, seed=cfg.seed, top1=top1,
        param_count=net.parameter_count(), wall_s=wall,
        paper_ref_top1=C.reference_top1(cfg.version, reference_axis, axis_value),
    )
    T.save_checkpoint(net, out_dir / "checkpoint")
    _write_sidecar(cfg, row, out_dir)
    append_rows([row], out_dir / "results.csv")
    return row


def _write_sidecar(cfg: ExperimentConfig, row: ResultRow, out_dir: Path):
    sidecar = {
        "config": asdict(cfg),
        "result": asdict(row),
        "paper_ref_note": C.REFERENCE_NOTE,
    }
    name = f"{row.version}_{row.structure}_{row.normalization}_{row.loss}_seed{row.seed}.json"
    (out_dir / name).write_text(json.dumps(sidecar, indent=2, default=str))


def append_rows(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        if fresh:
            writer.writeheader()
        for row in rows:
            writer.writerow(row.as_csv_dict())


def sweep(base_cfg: ExperimentConfig, axis: str, versions=VERSIONS, values=None,
          out_dir=None):
    """Cartesian grid over versions x axis values; partial failures are
    recorded and the sweep continues.

    Returns (rows, failures) where failures is a list of
    (version, value, message).  Emits results.csv plus a pivoted CSV in
    the comparison-table layout (one row per version, one column per
    axis value).
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(SWEEP_AXES[axis] if values is None else values)
    out_dir = Path(out_dir or base_cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    for version in versions:
        for value in values:
            cfg = replace(base_cfg, version=version, out=str(out_dir / f"{version}_{value}"))
            setattr(cfg, axis, value)
            try:
                rows.append(run_experiment(cfg, reference_axis=axis))
            except Exception as exc:  # per-cell isolation
                failures.append((version, value, str(exc)))
    append_rows(rows, out_dir / "results.csv")
    write_pivot(rows, axis, values, out_dir / f"table_{axis}.csv", versions=versions)
    return rows, failures


def write_pivot(rows, axis, values, path, versions=VERSIONS):
    """Comparison-table CSV: versions down, axis values across, with the
    published reference value alongside each measured cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {}
    for row in rows:
        key = getattr(row, axis)
        index[(row.version, key)] = row
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["version", "layers"]
        for v in values:
            header += [f"{v}_top1", f"{v}_ref_top1"]
        writer.writerow(header)
        for version in versions:
            line = [version, C.VERSION_LAYER_COUNTS[version]]
            for v in values:
                row = index.get((version, v))
                line.append(f"{row.top1:.4f}" if row else "failed")
                ref = C.reference_top1(version, axis, v)
                line.append("" if ref is None else ref)
            writer.writerow(line)
