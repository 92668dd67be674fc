"""Standard gradient-check suite: every op, then the full composed model.

Each per-op check builds a tiny graph around one op and reduces it to a
scalar through a fixed random weighting, so coordinate mix-ups cannot
cancel out. The composed check runs a 2-user / 4-item / 3-layer toy of the
complete fusion + backbone + loss graph and differentiates every parameter.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_difference_check
from .model import ItemVocab, ModelConfig, Recommender


def _away_from_kinks(x, margin=0.05):
    """Push values out of the +-margin band around zero (relu edge)."""
    return x + np.sign(x + 1e-12) * margin


def _weighted_mean(out, rng):
    w = Tensor(rng.normal(size=out.shape).astype(np.float32))
    return ad.mean(ad.mul(out, w))


def op_checks(seed=0):
    """Yield (name, inputs, fn) triples for finite_difference_check."""
    rng = np.random.default_rng(seed)

    def t(*shape, kink_safe=False):
        x = rng.normal(size=shape).astype(np.float32)
        if kink_safe:
            x = _away_from_kinks(x)
        return Tensor(x, requires_grad=True)

    checks = []

    a, b = t(3, 4), t(3, 4)
    checks.append(("add", [a, b], lambda a=a, b=b: _weighted_mean(ad.add(a, b), np.random.default_rng(1))))
    a, b = t(3, 4), t(4)
    checks.append(("add_broadcast", [a, b], lambda a=a, b=b: _weighted_mean(ad.add(a, b), np.random.default_rng(2))))
    a, b = t(2, 5), t(2, 5)
    checks.append(("sub", [a, b], lambda a=a, b=b: _weighted_mean(ad.sub(a, b), np.random.default_rng(3))))
    a, b = t(4, 3), t(1, 3)
    checks.append(("mul_broadcast", [a, b], lambda a=a, b=b: _weighted_mean(ad.mul(a, b), np.random.default_rng(4))))
    a, b = t(2, 3), t(3, 4)
    checks.append(("matmul", [a, b], lambda a=a, b=b: _weighted_mean(ad.matmul(a, b), np.random.default_rng(5))))
    a, b = t(2, 2, 3), t(2, 3, 2)
    checks.append(("matmul_batched", [a, b], lambda a=a, b=b: _weighted_mean(ad.matmul(a, b), np.random.default_rng(6))))
    a, b = t(2, 4), t(2, 3)
    checks.append(("concat", [a, b], lambda a=a, b=b: _weighted_mean(ad.concat([a, b], axis=-1), np.random.default_rng(7))))
    x = t(3, 5)
    checks.append(("sigmoid", [x], lambda x=x: _weighted_mean(ad.sigmoid(x), np.random.default_rng(8))))
    x = t(3, 5, kink_safe=True)
    checks.append(("relu", [x], lambda x=x: _weighted_mean(ad.relu(x), np.random.default_rng(9))))
    x = t(4, 6)
    checks.append(("softmax", [x], lambda x=x: _weighted_mean(ad.softmax(x, axis=-1), np.random.default_rng(10))))
    x, g, bb = t(2, 3, 8), t(8), t(8)
    checks.append(("layer_norm", [x, g, bb],
                   lambda x=x, g=g, bb=bb: _weighted_mean(ad.layer_norm(x, g, bb), np.random.default_rng(11))))

    table = t(5, 4)
    ids = np.array([0, 2, 4, 2, 1])  # repeated id exercises accumulation
    checks.append(("embedding", [table],
                   lambda table=table: _weighted_mean(ad.embedding(table, ids), np.random.default_rng(12))))

    q, k, v = t(2, 2, 4, 3), t(2, 2, 4, 3), t(2, 2, 4, 3)
    causal = np.triu(np.full((4, 4), -1e9, dtype=np.float32), k=1)[None, None]
    checks.append(("attention", [q, k, v],
                   lambda q=q, k=k, v=v: _weighted_mean(ad.attention(q, k, v, causal),
                                                        np.random.default_rng(13))))

    logits = t(4, 6)
    targets = np.array([1, 0, 5, 3])
    checks.append(("cross_entropy", [logits],
                   lambda logits=logits: ad.cross_entropy(logits, targets)))
    logits2 = t(4, 6)
    weights = np.array([0.5, 0.0, 0.25, 0.25], dtype=np.float32)
    checks.append(("cross_entropy_weighted", [logits2],
                   lambda logits2=logits2: ad.cross_entropy(logits2, targets, weights)))

    x = t(3, 4)
    checks.append(("sum", [x], lambda x=x: ad.sum_(ad.mul(x, x))))
    x = t(2, 3, 4)
    checks.append(("mean_axis", [x], lambda x=x: _weighted_mean(ad.mean(x, axis=1), np.random.default_rng(14))))
    x = t(2, 6)
    checks.append(("reshape", [x], lambda x=x: _weighted_mean(ad.reshape(x, (3, 4)), np.random.default_rng(15))))
    x = t(2, 3, 4)
    checks.append(("transpose", [x], lambda x=x: _weighted_mean(ad.transpose(x, (1, 0, 2)), np.random.default_rng(16))))
    x = t(3, 4, 2)
    checks.append(("index_axis", [x], lambda x=x: _weighted_mean(ad.index_axis(x, 1, 2), np.random.default_rng(17))))

    return checks


def toy_model(seed=0, strategy="fusion", aggregation="learned_weights"):
    """2 users, 4 items, 3 feature layers: the composed-graph check target."""
    rng = np.random.default_rng(seed)
    config = ModelConfig(dim=8, num_blocks=2, num_heads=2, max_seq_len=5,
                         dropout=0.0, strategy=strategy, aggregation=aggregation)
    vocab = ItemVocab(np.arange(1, 5, dtype=np.int64))
    model = Recommender(config, vocab, num_layers=3, feat_dim=6, seed=seed)
    bank = np.zeros((5, 3, 6), dtype=np.float32)
    bank[1:] = rng.normal(size=(4, 3, 6)).astype(np.float32)
    model.embedder.attach_features(bank)
    inputs = np.array([[0, 0, 1, 3, 2],
                       [0, 1, 4, 2, 3]], dtype=np.int64)
    targets = np.array([[0, 0, 3, 2, 4],
                        [0, 4, 2, 3, 1]], dtype=np.int64)
    return model, inputs, targets


def model_check(seed=0, h=1e-3, tol=1e-3):
    """Gradient-check every parameter of the composed toy model."""
    model, inputs, targets = toy_model(seed)
    params = [p for _, p in model.params.items()]
    return finite_difference_check(
        lambda: model.batch_loss(inputs, targets), params, h=h, tol=tol)


def run_suite(seed=0, h=1e-3, tol=1e-3, log=print):
    """Run every per-op check plus the composed model check.

    Returns the worst GradCheckReport observed.
    """
    worst = None
    for name, inputs, fn in op_checks(seed):
        report = finite_difference_check(fn, inputs, h=h, tol=tol)
        log(f"  {name:<24} max rel err {report.max_rel_error:.3e}  "
            f"{'ok' if report.passed else 'FAIL'}")
        if worst is None or report.max_rel_error > worst.max_rel_error:
            worst = report
    report = model_check(seed, h=h, tol=tol)
    log(f"  {'composed_model':<24} max rel err {report.max_rel_error:.3e}  "
        f"{'ok' if report.passed else 'FAIL'}")
    if report.max_rel_error > worst.max_rel_error:
        worst = report
    return worst
