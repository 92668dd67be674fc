"""Ranking evaluation: leave-one-out hit rate and NDCG at fixed cutoffs.

The target's rank counts every non-excluded candidate with a score >= the
target's score (pessimistic ties), plus one. A hit at cutoff N is rank <= N
and contributes 1/log2(rank + 1) to NDCG; misses contribute zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def rank_target(scores: np.ndarray, target: int, excluded=None) -> int:
    """1-based rank of `target` (an index into scores) among non-excluded
    candidates. `excluded` is an iterable of indices or a boolean mask."""
    scores = np.asarray(scores)
    if not 0 <= target < scores.shape[0]:
        raise ValueError(f"target index {target} out of range for {scores.shape[0]} candidates")
    if excluded is None:
        mask = np.zeros(scores.shape[0], dtype=bool)
    elif isinstance(excluded, np.ndarray) and excluded.dtype == bool:
        mask = excluded.copy()
    else:
        mask = np.zeros(scores.shape[0], dtype=bool)
        idx = np.asarray(sorted(int(i) for i in excluded), dtype=np.int64)
        if idx.size:
            mask[idx] = True
    if mask[target]:
        raise ValueError(f"target {target} is in the exclusion set")
    mask[target] = True  # never compare the target against itself
    contenders = scores[~mask]
    return 1 + int(np.count_nonzero(contenders >= scores[target]))


def metrics_at_n(rank: int, n: int):
    """(hit, ndcg) contribution of a single ranked target at cutoff n."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank <= n:
        return 1.0, 1.0 / np.log2(rank + 1)
    return 0.0, 0.0


@dataclass
class EvalReport:
    phase: str
    cutoffs: tuple
    num_users: int
    hit_rate: dict
    ndcg: dict
    ranks: np.ndarray

    def metric_rows(self):
        return [(n, self.hit_rate[n], self.ndcg[n]) for n in self.cutoffs]

    def lines(self):
        out = [f"phase: {self.phase}", f"users evaluated: {self.num_users}"]
        out.append(f"{'cutoff':>8} {'hit_rate':>10} {'ndcg':>10}")
        for n, hr, nd in self.metric_rows():
            out.append(f"{n:>8} {hr:>10.4f} {nd:>10.4f}")
        out.append("rank histogram:")
        edges = [(1, 1), (2, 5), (6, 10), (11, 20), (21, 50), (51, None)]
        for lo, hi in edges:
            if hi is None:
                count = int(np.count_nonzero(self.ranks >= lo))
                label = f"{lo}+"
            else:
                count = int(np.count_nonzero((self.ranks >= lo) & (self.ranks <= hi)))
                label = f"{lo}-{hi}" if lo != hi else f"{lo}"
            out.append(f"  rank {label:>6}: {count}")
        return out

    def csv_rows(self):
        rows = ["phase,cutoff,hit_rate,ndcg,num_users"]
        for n, hr, nd in self.metric_rows():
            rows.append(f"{self.phase},{n},{hr:.6f},{nd:.6f},{self.num_users}")
        return rows


def summarize_ranks(ranks, cutoffs, phase="val") -> EvalReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    hit_rate, ndcg = {}, {}
    for n in cutoffs:
        hits = np.array([metrics_at_n(int(r), n) for r in ranks], dtype=np.float64)
        if len(hits) == 0:
            hit_rate[n], ndcg[n] = 0.0, 0.0
        else:
            hit_rate[n] = float(hits[:, 0].mean())
            ndcg[n] = float(hits[:, 1].mean())
    return EvalReport(phase=phase, cutoffs=tuple(cutoffs), num_users=len(ranks),
                      hit_rate=hit_rate, ndcg=ndcg, ranks=ranks)


def evaluate(model, split, phase="val", exclude_seen=True, cutoffs=(10, 20),
             batch_size=256) -> EvalReport:
    """Rank each user's held-out target against the full catalog.

    phase "val": the model sees the training prefix and must rank the
    validation item. phase "test": the prefix plus the validation item,
    ranking the test item. With exclude_seen, items already in the model's
    input sequence are removed from the candidate set (the target itself is
    always kept even if the user interacted with it before).
    """
    if phase not in ("val", "test"):
        raise ValueError(f"phase must be 'val' or 'test', got {phase}")
    T = model.config.max_seq_len
    users = split.users
    ranks = np.empty(len(users), dtype=np.int64)
    for start in range(0, len(users), batch_size):
        chunk = users[start:start + batch_size]
        rows = np.zeros((len(chunk), T), dtype=np.int64)
        targets = []
        exclusions = []
        for r, user in enumerate(chunk):
            seq = list(split.prefix[user])
            if phase == "test":
                seq.append(split.val[user])
                target = split.test[user]
            else:
                target = split.val[user]
            seq = seq[-T:]
            rows[r, T - len(seq):] = seq
            targets.append(target)
            exclusions.append(set(seq) if exclude_seen else set())
        scores = model.score_sequences(rows)
        for r in range(len(chunk)):
            # scores column v is internal item v+1
            excl = {i - 1 for i in exclusions[r] if i != targets[r]}
            ranks[start + r] = rank_target(scores[r], targets[r] - 1, excl)
    return summarize_ranks(ranks, cutoffs, phase)


def write_report(report: EvalReport, txt_path, csv_path):
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write("\n".join(report.lines()) + "\n")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("\n".join(report.csv_rows()) + "\n")
