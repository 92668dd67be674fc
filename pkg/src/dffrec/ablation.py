"""Ablation harness: layer sweep, strategy matrix, and learned-weight runs.

Every cell trains under the same seed and the same split (asserted by
hash). Completed cells are cached under out_dir/cells keyed by a manifest
hash, so re-running a finished sweep is a no-op. Published full-scale
reference numbers (MicroLens) are appended to the human-readable tables as
orientation only; desk-scale runs are not expected to reproduce them.
"""

from __future__ import annotations

import json
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import evaluate
from .model import ModelConfig
from .training import SplitDataset, TrainSchedule, train

# Published full-scale MicroLens results, for table footnotes only.
REFERENCE_FULL_SCALE = {
    "strategy": {"id_only": (0.0909, 0.0517), "replacement": (0.0665, 0.0375),
                 "fusion": (0.0975, 0.0545)},
    "layer_sweep": {"uniform_average": (0.1012, 0.0571), "best_single": (0.1005, 0.0569)},
    "dff": (0.1020, 0.0577),
}

CSV_HEADER = "arm,layer,hr10,ndcg10,hr20,ndcg20,seed"


@dataclass
class CellResult:
    arm: str
    layer: str
    hr10: float
    ndcg10: float
    hr20: float
    ndcg20: float
    seed: int
    extra: dict | None = None

    def csv_row(self):
        return (f"{self.arm},{self.layer},{self.hr10:.6f},{self.ndcg10:.6f},"
                f"{self.hr20:.6f},{self.ndcg20:.6f},{self.seed}")


def _cell_key(split_hash, store_hash, config, schedule, seed, arm):
    blob = json.dumps({
        "split": split_hash, "store": store_hash, "arm": arm, "seed": seed,
        "config": config.__dict__, "schedule": schedule.__dict__,
    }, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _run_cell(out_dir, key, arm, layer, seed, runner):
    """Train-and-evaluate one cell unless its cache file already exists."""
    cell_path = Path(out_dir) / "cells" / f"{key}.json"
    if cell_path.exists():
        data = json.loads(cell_path.read_text())
        return CellResult(**data)
    result, report = runner()
    cell = CellResult(arm, layer, report.hit_rate[10], report.ndcg[10],
                      report.hit_rate[20], report.ndcg[20], seed,
                      extra={"best_epoch": result.best_epoch,
                             "val_hr10": result.best_val_hr10,
                             "layer_weights": [float(w) for w in result.model.layer_weights()],
                             "final_layer_weights": result.final_layer_weights})
    cell_path.parent.mkdir(parents=True, exist_ok=True)
    cell_path.write_text(json.dumps(cell.__dict__, sort_keys=True) + "\n")
    return cell


def _trainer(split, store, config, schedule, seed, exclude_seen):
    def run():
        res = train(split, store, config, schedule, seed=seed, exclude_seen=exclude_seen)
        report = evaluate(res.model, split, phase="test",
                          exclude_seen=exclude_seen, cutoffs=(10, 20))
        return res, report
    return run


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(CSV_HEADER + "\n")
        for r in rows:
            f.write(r.csv_row() + "\n")


def layer_sweep(split: SplitDataset, store, config: ModelConfig,
                schedule: TrainSchedule, out_dir, seed=0, exclude_seen=True,
                jobs=1):
    """One arm per single layer plus the uniform average: L + 1 rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split_hash = split.content_hash()
    store_hash = hashlib.sha256(store.matrix.tobytes()).hexdigest()[:16]
    L = store.header.num_layers

    specs = []
    for k in range(1, L + 1):
        cfg = ModelConfig(**{**config.__dict__, "aggregation": "single_layer", "layer_k": k})
        specs.append((f"single_layer", str(k), cfg))
    specs.append(("uniform_average", "all",
                  ModelConfig(**{**config.__dict__, "aggregation": "uniform_average"})))

    def launch(spec):
        arm, layer, cfg = spec
        key = _cell_key(split_hash, store_hash, cfg, schedule, seed, f"{arm}:{layer}")
        return _run_cell(out_dir, key, arm, layer, seed,
                         _trainer(split, store, cfg, schedule, seed, exclude_seen))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(launch, specs))
    else:
        rows = [launch(s) for s in specs]

    _write_csv(out_dir / "layer_sweep.csv", rows)
    ref = REFERENCE_FULL_SCALE["layer_sweep"]
    table = [CSV_HEADER] + [r.csv_row() for r in rows]
    table.append(f"# reference@full-scale MicroLens: uniform_average hr10 "
                 f"{ref['uniform_average'][0]:.4f}, best single layer {ref['best_single'][0]:.4f}")
    (out_dir / "layer_sweep.txt").write_text("\n".join(table) + "\n")
    return rows


def strategy_matrix(split: SplitDataset, stores: dict, config: ModelConfig,
                    schedule: TrainSchedule, out_dir, seed=0, exclude_seen=True,
                    jobs=1):
    """{id_only, replacement, fusion} x {hidden-state store, caption store}.

    Six table rows; the id_only run ignores the store, so it is trained once
    and its metrics appear in both store columns.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split_hash = split.content_hash()

    specs = []
    for store_name, store in stores.items():
        for strategy in ("replacement", "fusion"):
            cfg = ModelConfig(**{**config.__dict__, "strategy": strategy})
            specs.append((strategy, store_name, store, cfg))
    id_cfg = ModelConfig(**{**config.__dict__, "strategy": "id_only"})
    first_store = next(iter(stores.values()))
    specs.append(("id_only", "-", first_store, id_cfg))

    def launch(spec):
        strategy, store_name, store, cfg = spec
        store_hash = hashlib.sha256(store.matrix.tobytes()).hexdigest()[:16]
        if strategy == "id_only":
            store_hash = "-"
        key = _cell_key(split_hash, store_hash, cfg, schedule, seed, strategy)
        return _run_cell(out_dir, key, strategy, store_name, seed,
                         _trainer(split, store, cfg, schedule, seed, exclude_seen))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(launch, specs))
    else:
        rows = [launch(s) for s in specs]

    id_row = rows[-1]
    table_rows = []
    for store_name in stores:
        table_rows.append(CellResult("id_only", store_name, id_row.hr10, id_row.ndcg10,
                                     id_row.hr20, id_row.ndcg20, seed))
    table_rows.extend(rows[:-1])
    _write_csv(out_dir / "strategy_matrix.csv", table_rows)

    ref = REFERENCE_FULL_SCALE["strategy"]
    table = [CSV_HEADER] + [r.csv_row() for r in table_rows]
    for arm, (hr, nd) in ref.items():
        table.append(f"# reference@full-scale MicroLens: {arm} hr10 {hr:.4f}, ndcg10 {nd:.4f}")
    (out_dir / "strategy_matrix.txt").write_text("\n".join(table) + "\n")
    return table_rows


def dff_run(split: SplitDataset, store, config: ModelConfig,
            schedule: TrainSchedule, out_dir, seed=0, exclude_seen=True):
    """Train the learned-weight fusion model and export the learned mix."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = ModelConfig(**{**config.__dict__,
                         "aggregation": "learned_weights", "strategy": "fusion"})
    split_hash = split.content_hash()
    store_hash = hashlib.sha256(store.matrix.tobytes()).hexdigest()[:16]
    key = _cell_key(split_hash, store_hash, cfg, schedule, seed, "dff")
    cell = _run_cell(out_dir, key, "dff", "all", seed,
                     _trainer(split, store, cfg, schedule, seed, exclude_seen))
    extra = cell.extra or {}
    weights = extra.get("final_layer_weights") or extra.get("layer_weights", [])
    ref = REFERENCE_FULL_SCALE["dff"]
    payload = {
        "layer_weights": weights,
        "best_val_layer_weights": extra.get("layer_weights", []),
        "hr10": cell.hr10, "ndcg10": cell.ndcg10,
        "hr20": cell.hr20, "ndcg20": cell.ndcg20,
        "seed": seed,
        "reference_full_scale_microlens": {"hr10": ref[0], "ndcg10": ref[1]},
    }
    (out_dir / "dff_weights.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_csv(out_dir / "dff.csv", [cell])
    return cell
