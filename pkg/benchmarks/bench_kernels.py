"""Timings for the compiled kernels against the numpy fallback.

Run `python3 benchmarks/bench_kernels.py` for the side-by-side table; the
script re-invokes itself with DFFREC_PURE_PY=1 to time the fallback, because
the backend is frozen at import. `--json` prints one process's numbers only.
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

from dffrec import store as store_io
from dffrec.kernels import BACKEND, adamw_update, scatter_add_rows
from dffrec.model import ItemVocab, ModelConfig
from dffrec.synth import SynthSpec, generate_catalog, generate_interactions
from dffrec.training import TrainSchedule, split_leave_one_out, train


def timeit(fn, reps):
    fn()                                    # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def bench_scatter(vocab=20_000, batch_rows=4_096, dim=64, reps=50):
    rng = np.random.default_rng(0)
    out = np.zeros((vocab, dim), dtype=np.float32)
    idx = rng.integers(0, vocab, size=batch_rows).astype(np.int64)
    rows = rng.normal(size=(batch_rows, dim)).astype(np.float32)
    return timeit(lambda: scatter_add_rows(out, idx, rows), reps)


def bench_adamw(size=1_000_000, reps=50):
    rng = np.random.default_rng(1)
    param = rng.normal(size=size).astype(np.float32)
    grad = rng.normal(size=size).astype(np.float32)
    m = np.zeros(size, dtype=np.float32)
    v = np.zeros(size, dtype=np.float32)
    return timeit(lambda: adamw_update(param, grad, m, v, 3, 1e-3, 0.9, 0.999,
                                       1e-8, 0.1), reps)


def bench_epoch():
    """Seconds per training epoch on a small synthetic dataset."""
    spec = SynthSpec(num_users=300, num_items=150)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bench.dffs")
        header, items = generate_catalog(spec, 0)
        store_io.write_store(path, header, items)
        store = store_io.read_store(path)
    log = generate_interactions(spec, store, 0)
    split = split_leave_one_out(log, ItemVocab(np.asarray(store.ids)))
    cfg = ModelConfig(dim=32, num_blocks=2, num_heads=2, max_seq_len=20,
                      dropout=0.0)
    sched = TrainSchedule(learning_rate=1e-3, weight_decay=0.1, batch_size=64,
                          patience=99, max_epochs=4)
    t0 = time.perf_counter()
    train(split, store, cfg, sched, seed=0)
    return (time.perf_counter() - t0) / sched.max_epochs


def run_all():
    return {
        "backend": BACKEND,
        "scatter_add_rows": bench_scatter(),
        "adamw_update": bench_adamw(),
        "train_epoch": bench_epoch(),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--json", action="store_true",
                        help="print this process's numbers as JSON and exit")
    args = parser.parse_args()

    if args.json:
        print(json.dumps(run_all()))
        return

    here = run_all()
    env = dict(os.environ, DFFREC_PURE_PY="1")
    child = subprocess.run([sys.executable, __file__, "--json"], env=env,
                           capture_output=True, text=True, check=True)
    fallback = json.loads(child.stdout)

    if here["backend"] == "python":
        print("compiled extension not built; timing the fallback against itself")
    print(f"{'kernel':<20}{here['backend']:>12}{fallback['backend']:>12}"
          f"{'speedup':>10}")
    for key, unit, scale in (("scatter_add_rows", "ms", 1e3),
                             ("adamw_update", "ms", 1e3),
                             ("train_epoch", "s", 1.0)):
        a, b = here[key] * scale, fallback[key] * scale
        print(f"{key:<20}{a:>10.2f}{unit:<2}{b:>10.2f}{unit:<2}"
              f"{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
