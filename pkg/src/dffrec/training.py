"""Leave-one-out splitting, the training loop, and grid search.

Split: per user, the last item is the test target, the second-to-last the
validation target, everything before is the training prefix. Users with
fewer than three interactions are dropped (and counted).

Training draws one sample per user per epoch: the user's full training
prefix, shifted by one, every non-padded position supervised. Early
stopping watches validation HR@10 with a patience window and restores the
best epoch's parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward
from .evaluation import evaluate
from .model import ItemVocab, ModelConfig, Recommender
from .optim import AdamW
from .store import FeatureStore, InteractionLog


@dataclass
class SplitDataset:
    """Leave-one-out split over internal item indices (1-based, 0 = padding)."""

    users: list
    prefix: dict           # user -> [internal idx], length >= 1
    val: dict              # user -> internal idx
    test: dict             # user -> internal idx
    dropped_users: int = 0

    def content_hash(self):
        h = hashlib.sha256()
        for user in self.users:
            h.update(f"{user}:{','.join(map(str, self.prefix[user]))}"
                     f"|{self.val[user]}|{self.test[user]};".encode())
        return h.hexdigest()


def split_leave_one_out(log: InteractionLog, vocab: ItemVocab) -> SplitDataset:
    users, prefix, val, test = [], {}, {}, {}
    dropped = 0
    for user, events in log.users.items():
        items = [item for item, _ in events]
        if len(items) < 3:
            dropped += 1
            continue
        seq = vocab.to_internal(items, context=f"user {user}")
        users.append(user)
        prefix[user] = seq[:-2]
        val[user] = seq[-2]
        test[user] = seq[-1]
    if not users:
        raise ValueError("split: no users with >= 3 interactions")
    return SplitDataset(users, prefix, val, test, dropped)


def iter_epoch_batches(split: SplitDataset, batch_size, max_seq_len, rng):
    """Yield (inputs, targets) int64 batches, one row per trainable user.

    Row for a prefix [a, b, c]: inputs [.., a, b], targets [.., b, c],
    left-padded. Users whose prefix has fewer than two items yield no
    supervised positions and are skipped.
    """
    trainable = [u for u in split.users if len(split.prefix[u]) >= 2]
    order = rng.permutation(len(trainable))
    for start in range(0, len(order), batch_size):
        chunk = [trainable[i] for i in order[start:start + batch_size]]
        inputs = np.zeros((len(chunk), max_seq_len), dtype=np.int64)
        targets = np.zeros((len(chunk), max_seq_len), dtype=np.int64)
        for r, user in enumerate(chunk):
            seq = split.prefix[user][-(max_seq_len + 1):]
            ins, tgt = seq[:-1], seq[1:]
            inputs[r, max_seq_len - len(ins):] = ins
            targets[r, max_seq_len - len(tgt):] = tgt
        yield inputs, targets


def best_epoch_index(history):
    """Index of the first maximum in a metric history (0-based)."""
    best = 0
    for i, v in enumerate(history):
        if v > history[best]:
            best = i
    return best


def should_stop(history, patience):
    """True once the metric has not improved for `patience` consecutive epochs."""
    return len(history) - 1 - best_epoch_index(history) >= patience


@dataclass
class TrainSchedule:
    learning_rate: float = 1e-4
    weight_decay: float = 0.1
    batch_size: int = 512
    patience: int = 5
    max_epochs: int = 100
    lr_grid: tuple = (1e-4, 1e-5, 1e-6)
    dim_grid: tuple = (512, 1024, 2048)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_hr10: float


@dataclass
class TrainResult:
    model: Recommender
    best_epoch: int                      # 1-based
    best_val_hr10: float
    history: list = field(default_factory=list)
    # Aggregation mix at the last epoch actually run.  The returned model is
    # rolled back to the best-validation epoch, but the mix keeps drifting
    # toward its fixed point after the ranking metric peaks, so the converged
    # value is recorded separately before the rollback.
    final_layer_weights: list | None = None


def train(split: SplitDataset, store: FeatureStore, config: ModelConfig,
          schedule: TrainSchedule, seed=0, exclude_seen=True,
          batch_hook=None) -> TrainResult:
    """Train one model to convergence under early stopping.

    batch_hook, if given, is called with every (inputs, targets) training
    batch; the audit tests use it to prove held-out targets never leak.
    """
    vocab = ItemVocab(np.asarray(store.ids))
    model = Recommender(config, vocab, store.header.num_layers, store.header.dim, seed=seed)
    model.attach_store(store)
    opt = AdamW(model.params, schedule.learning_rate,
                weight_decay=schedule.weight_decay, decay_matrices_only=True)

    seq = np.random.SeedSequence([seed, 0x5eed])
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(2))

    history = []
    val_curve = []
    best_state = model.params.state_dict()
    best_epoch = 0
    for epoch in range(1, schedule.max_epochs + 1):
        losses = []
        for inputs, targets in iter_epoch_batches(
                split, schedule.batch_size, config.max_seq_len, shuffle_rng):
            if batch_hook is not None:
                batch_hook(inputs, targets)
            loss = model.batch_loss(inputs, targets,
                                    dropout_rng if config.dropout > 0 else None)
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        report = evaluate(model, split, phase="val", exclude_seen=exclude_seen, cutoffs=(10,))
        hr10 = report.hit_rate[10]
        val_curve.append(hr10)
        history.append(EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), hr10))
        if best_epoch == 0 or hr10 > val_curve[best_epoch - 1]:
            best_epoch = epoch
            best_state = model.params.state_dict()
        if should_stop(val_curve, schedule.patience):
            break
    final_weights = [float(w) for w in model.layer_weights()]
    model.params.load_state_dict(best_state)
    return TrainResult(model, best_epoch, val_curve[best_epoch - 1], history,
                       final_layer_weights=final_weights)


@dataclass
class GridCell:
    learning_rate: float
    dim: int
    best_epoch: int
    val_hr10: float


@dataclass
class GridResult:
    best: TrainResult
    best_cell: GridCell
    cells: list


def grid_search(split, store, config: ModelConfig, schedule: TrainSchedule,
                seed=0, exclude_seen=True) -> GridResult:
    """Train every (lr, dim) cell; pick the best validation HR@10.

    Ties go to the smaller dim, then the smaller learning rate.
    """
    lrs = tuple(schedule.lr_grid) or (schedule.learning_rate,)
    dims = tuple(schedule.dim_grid) or (config.dim,)
    cells = []
    results = {}
    for dim in dims:
        for lr in lrs:
            cell_config = ModelConfig(**{**config.__dict__, "dim": int(dim)})
            cell_schedule = TrainSchedule(
                learning_rate=float(lr), weight_decay=schedule.weight_decay,
                batch_size=schedule.batch_size, patience=schedule.patience,
                max_epochs=schedule.max_epochs)
            res = train(split, store, cell_config, cell_schedule, seed=seed,
                        exclude_seen=exclude_seen)
            cell = GridCell(float(lr), int(dim), res.best_epoch, res.best_val_hr10)
            cells.append(cell)
            results[(float(lr), int(dim))] = res
    winner = max(cells, key=lambda c: (c.val_hr10, -c.dim, -c.learning_rate))
    return GridResult(results[(winner.learning_rate, winner.dim)], winner, cells)


# -------------------------------------------------------------- run manifests

def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_lines(seed, config: ModelConfig, schedule: TrainSchedule,
                   store_hash, split_hash, cells, best_cell, dropped_users):
    out = [
        f"seed = {seed}",
        f"store_sha256 = {store_hash}",
        f"split_sha256 = {split_hash}",
        f"dropped_users = {dropped_users}",
    ]
    for key, value in sorted(config.__dict__.items()):
        out.append(f"model.{key} = {value}")
    for key, value in sorted(schedule.__dict__.items()):
        out.append(f"schedule.{key} = {value}")
    for cell in cells:
        out.append(f"grid[lr={cell.learning_rate:g},dim={cell.dim}] = "
                   f"val_hr10 {cell.val_hr10:.6f} @ epoch {cell.best_epoch}")
    out.append(f"best = lr={best_cell.learning_rate:g},dim={best_cell.dim},"
               f"val_hr10={best_cell.val_hr10:.6f},epoch={best_cell.best_epoch}")
    return out
