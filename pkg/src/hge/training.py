"""Loss, analytic gradients and the optimizer loop.

Training follows the tensor-factorization recipe: full-softmax multiclass
cross-entropy over all candidate objects, with every fact also trained in the
reciprocal direction (o, p_inverse, s, t) against the second half of the
relation table. Regularizers: a weighted N3 penalty on the three factor rows
of each query (subject, hybrid relation, true object) using per-component
modulus cubed, plus a temporal smoothness penalty summing the L2 norms of
consecutive time-embedding differences.

The backward pass is exact (chain rule through both softmax attentions, the
geometry products and the regularizers) and is checked against central finite
differences in the test suite. The optimizer is Adagrad: per-coordinate
accumulated squared gradients, single-writer updates, deterministic for a
fixed seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .data import Dataset
from .model import (
    Composition,
    ModelState,
    Variant,
    batch_forward,
    variant_spec,
    _stack_blocks,
)

__all__ = [
    "TrainConfig",
    "GradientBuffer",
    "REG_WEIGHT_GRID",
    "loss",
    "backward",
    "fit",
    "write_trace",
]

#: Candidate embedding-regularizer weights for grid search.
REG_WEIGHT_GRID = (5e-4, 3e-3, 5e-3, 3e-3, 1e-3, 3e-2, 1e-2, 1e-1)

_ADAGRAD_EPS = 1e-10


@dataclass
class TrainConfig:
    """Hyperparameters for one training run (flat key=value file format)."""

    dim: int = 32
    epochs: int = 200
    batch_size: int = 1000
    learning_rate: float = 0.1
    emb_reg: float = 1e-2
    time_reg: float = 1e-2
    seed: int = 0
    variant: Variant = Variant.HGE_FULL

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = Variant(self.variant)
        if self.dim < 1 or self.batch_size < 1:
            raise ValueError("dim and batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.emb_reg < 0 or self.time_reg < 0:
            raise ValueError("regularizer weights must be non-negative")

    _ALIASES = {"lr": "learning_rate", "lambda": "emb_reg", "smooth": "time_reg"}

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            name = cls._ALIASES.get(key, key)
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(value, str):
                if name in ("dim", "epochs", "batch_size", "seed"):
                    value = int(value)
                elif name in ("learning_rate", "emb_reg", "time_reg"):
                    value = float(value)
            kwargs[name] = value
        return cls(**kwargs)

    def to_file(self, path) -> None:
        lines = [
            f"{f.name} = {getattr(self, f.name).value if f.name == 'variant' else getattr(self, f.name)}"
            for f in fields(self)
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["variant"] = self.variant.value
        return out


@dataclass
class GradientBuffer:
    """Gradients mirroring the model tables; rows untouched by the batch are
    exactly zero (entities are always touched: every row is a softmax
    candidate)."""

    ent_a: np.ndarray
    ent_b: np.ndarray
    rel_s_a: np.ndarray
    rel_s_b: np.ndarray
    rel_c_a: np.ndarray
    rel_c_b: np.ndarray
    rel_w: np.ndarray
    time_a: np.ndarray
    time_b: np.ndarray

    @classmethod
    def zeros(cls, m: ModelState) -> "GradientBuffer":
        return cls(**{k: np.zeros_like(v) for k, v in m.tables().items()})

    def tables(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _reciprocal_queries(m: ModelState, batch: np.ndarray):
    """Expand facts to 2N (subject, relation, time, true-object) queries."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 2 or batch.shape[1] != 4 or batch.shape[0] == 0:
        raise ValueError("batch must be a non-empty (N, 4) array of id rows")
    s, p, o, t = batch[:, 0], batch[:, 1], batch[:, 2], batch[:, 3]
    s_idx = np.concatenate([s, o])
    r_idx = np.concatenate([p, p + m.n_relations])
    o_idx = np.concatenate([o, s])
    t_idx = np.concatenate([t, t])
    return s_idx, r_idx, o_idx, t_idx


def _n3(va: np.ndarray, vb: np.ndarray) -> np.ndarray:
    return np.sum((va * va + vb * vb) ** 1.5, axis=-1)


def _n3_grad(va: np.ndarray, vb: np.ndarray):
    mod = np.sqrt(va * va + vb * vb)
    return 3.0 * va * mod, 3.0 * vb * mod


def _smoothness(m: ModelState) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    da = m.time_a[1:] - m.time_a[:-1]
    db = m.time_b[1:] - m.time_b[:-1]
    norms = np.sqrt(np.sum(da * da + db * db, axis=1))
    return float(np.sum(norms)), da, db, norms


def _loss_and_grads(
    m: ModelState, batch: np.ndarray, cfg: TrainConfig, want_grads: bool
) -> tuple[float, Optional[GradientBuffer]]:
    spec = variant_spec(m.variant)
    s_idx, r_idx, o_idx, t_idx = _reciprocal_queries(m, batch)
    fw = batch_forward(m, s_idx, r_idx, t_idx)
    nq, d = s_idx.size, m.d

    # cross-entropy over all candidate objects
    mx = np.max(fw.scores, axis=1)
    lse = mx + np.log(np.sum(np.exp(fw.scores - mx[:, None]), axis=1))
    ce = float(np.mean(lse - fw.scores[np.arange(nq), o_idx]))

    total = ce
    oa, ob = m.ent_a[o_idx], m.ent_b[o_idx]
    sa, sb = m.ent_a[s_idx], m.ent_b[s_idx]
    if cfg.emb_reg:
        n3 = _n3(sa, sb) + _n3(fw.q_a, fw.q_b) + _n3(oa, ob)
        total += cfg.emb_reg * float(np.mean(n3))
    if cfg.time_reg and m.n_times > 1:
        smooth, _, _, _ = _smoothness(m)
        total += cfg.time_reg * smooth
    if not want_grads:
        return total, None

    grads = GradientBuffer.zeros(m)
    delta = np.exp(fw.scores - lse[:, None])
    delta[np.arange(nq), o_idx] -= 1.0
    delta /= nq

    dq_a = np.zeros_like(fw.q_a)
    dq_b = np.zeros_like(fw.q_b)
    ds_a = np.zeros_like(sa)
    ds_b = np.zeros_like(sb)
    blocks = _stack_blocks(d) if spec.stacked else None
    for i, g in enumerate(spec.geometries):
        sl = blocks[g] if blocks else slice(None)
        gg = g.unit_square
        ea, eb = m.ent_a[:, sl], m.ent_b[:, sl]
        xa, xb = fw.x_a[i], fw.x_b[i]
        qga, qgb = fw.q_a[:, sl], fw.q_b[:, sl]
        if spec.geo_attention:
            beta_g = fw.beta[:, :, i]
            w_g = delta * beta_g
            m_g = w_g * (fw.raw[i] - fw.scores)
            grads.ent_a[:, sl] += w_g.T @ xa + m_g.T @ fw.u[i]
            grads.ent_b[:, sl] += gg * (w_g.T @ xb) + m_g.T @ fw.v[i]
            W_a, W_b = w_g @ ea, w_g @ eb
            M_a, M_b = m_g @ ea, m_g @ eb
            dxa = W_a + qga * M_a + qgb * M_b
            dxb = gg * W_b + qgb * M_a + gg * (qga * M_b)
            dq_a[:, sl] += M_a * xa + gg * (M_b * xb)
            dq_b[:, sl] += M_a * xb + M_b * xa
        else:
            w_g = delta
            grads.ent_a[:, sl] += w_g.T @ xa
            grads.ent_b[:, sl] += gg * (w_g.T @ xb)
            dxa = w_g @ ea
            dxb = gg * (w_g @ eb)
        ds_a[:, sl] += dxa * qga + dxb * qgb
        ds_b[:, sl] += gg * (dxa * qgb) + dxb * qga
        dq_a[:, sl] += dxa * sa[:, sl] + dxb * sb[:, sl]
        dq_b[:, sl] += gg * (dxa * sb[:, sl]) + dxb * sa[:, sl]

    if cfg.emb_reg:
        scale = cfg.emb_reg / nq
        ga, gb = _n3_grad(sa, sb)
        ds_a += scale * ga
        ds_b += scale * gb
        ga, gb = _n3_grad(fw.q_a, fw.q_b)
        dq_a += scale * ga
        dq_b += scale * gb
        ga, gb = _n3_grad(oa, ob)
        np.add.at(grads.ent_a, o_idx, scale * ga)
        np.add.at(grads.ent_b, o_idx, scale * gb)

    np.add.at(grads.ent_a, s_idx, ds_a)
    np.add.at(grads.ent_b, s_idx, ds_b)

    # hybrid-relation composition
    psa, psb = m.rel_s_a[r_idx], m.rel_s_b[r_idx]
    if spec.composition is Composition.ATTENTION:
        a_t, a_s = fw.alpha[:, :1], fw.alpha[:, 1:]
        ddyn_a, ddyn_b = a_t * dq_a, a_t * dq_b
        dps_a, dps_b = a_s * dq_a, a_s * dq_b
        dat = np.sum(dq_a * fw.dyn_a + dq_b * fw.dyn_b, axis=1, keepdims=True)
        das = np.sum(dq_a * psa + dq_b * psb, axis=1, keepdims=True)
        dlt = a_t * a_s * (dat - das)
        w = m.rel_w[r_idx]
        grad_w = dlt * np.concatenate([fw.dyn_a - psa, fw.dyn_b - psb], axis=1)
        ddyn_a += dlt * w[:, :d]
        ddyn_b += dlt * w[:, d:]
        dps_a -= dlt * w[:, :d]
        dps_b -= dlt * w[:, d:]
        np.add.at(grads.rel_w, r_idx, grad_w)
    elif spec.composition is Composition.STATIC_DYNAMIC_SUM:
        ddyn_a, ddyn_b = dq_a, dq_b
        dps_a, dps_b = dq_a, dq_b
    else:
        ddyn_a, ddyn_b = dq_a, dq_b
        dps_a = dps_b = None

    if dps_a is not None:
        np.add.at(grads.rel_s_a, r_idx, dps_a)
        np.add.at(grads.rel_s_b, r_idx, dps_b)

    ta, tb = m.time_a[t_idx], m.time_b[t_idx]
    pca, pcb = m.rel_c_a[r_idx], m.rel_c_b[r_idx]
    np.add.at(grads.rel_c_a, r_idx, ddyn_a * ta + ddyn_b * tb)
    np.add.at(grads.rel_c_b, r_idx, -ddyn_a * tb + ddyn_b * ta)
    np.add.at(grads.time_a, t_idx, ddyn_a * pca + ddyn_b * pcb)
    np.add.at(grads.time_b, t_idx, -ddyn_a * pcb + ddyn_b * pca)

    if cfg.time_reg and m.n_times > 1:
        _, da, db, norms = _smoothness(m)
        safe = np.where(norms > 0.0, norms, 1.0)
        ua = cfg.time_reg * da / safe[:, None] * (norms > 0.0)[:, None]
        ub = cfg.time_reg * db / safe[:, None] * (norms > 0.0)[:, None]
        grads.time_a[1:] += ua
        grads.time_a[:-1] -= ua
        grads.time_b[1:] += ub
        grads.time_b[:-1] -= ub
    return total, grads


def loss(m: ModelState, batch: np.ndarray, cfg: Optional[TrainConfig] = None) -> float:
    """Mean reciprocal-augmented cross-entropy plus weighted regularizers."""
    cfg = cfg or TrainConfig(emb_reg=0.0, time_reg=0.0)
    value, _ = _loss_and_grads(m, batch, cfg, want_grads=False)
    return value


def backward(
    m: ModelState, batch: np.ndarray, cfg: Optional[TrainConfig] = None
) -> GradientBuffer:
    """Exact analytic gradients of loss() for every touched parameter row."""
    cfg = cfg or TrainConfig(emb_reg=0.0, time_reg=0.0)
    _, grads = _loss_and_grads(m, batch, cfg, want_grads=True)
    return grads


class TraceRow(NamedTuple):
    epoch: int
    train_loss: float
    valid_mrr: Optional[float]


def fit(
    m: ModelState,
    dataset: Dataset,
    cfg: TrainConfig,
    eval_every: int = 0,
) -> tuple[ModelState, list[TraceRow]]:
    """Run shuffled mini-batch Adagrad for cfg.epochs; deterministic per seed.

    Mutates and returns ``m`` along with the per-epoch loss trace. With
    eval_every > 0 the filtered validation MRR is computed every that many
    epochs. Aborts with a diagnostic if the loss stops being finite.
    """
    if dataset.n_entities != m.n_entities or dataset.n_relations != m.n_relations:
        raise ValueError("dataset vocabulary does not match the model tables")
    facts = dataset.train
    rng = np.random.default_rng(cfg.seed)
    accum = {k: np.zeros_like(v) for k, v in m.tables().items()}
    trace: list[TraceRow] = []

    evaluator = None
    if eval_every > 0 and len(dataset.valid):
        from .evaluation import FilterIndex, evaluate

        filt = FilterIndex.from_dataset(dataset)
        evaluator = lambda: evaluate(  # noqa: E731
            m, dataset, "valid", filt, seed=cfg.seed
        ).mrr

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(facts))
        batch_losses = []
        for start in range(0, len(facts), cfg.batch_size):
            batch = facts[order[start:start + cfg.batch_size]]
            value, grads = _loss_and_grads(m, batch, cfg, want_grads=True)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, "
                    f"batch starting {start}; aborting"
                )
            batch_losses.append(value)
            tables = m.tables()
            for key, grad in grads.tables().items():
                acc = accum[key]
                acc += grad * grad
                tables[key] -= cfg.learning_rate * grad / (np.sqrt(acc) + _ADAGRAD_EPS)
        mrr = None
        if evaluator is not None and (epoch + 1) % eval_every == 0:
            mrr = evaluator()
        trace.append(TraceRow(epoch, float(np.mean(batch_losses)), mrr))
    return m, trace


def write_trace(trace: list[TraceRow], path) -> None:
    """Loss trace as CSV: epoch, train_loss, valid_MRR (blank if not computed)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_MRR"])
        for row in trace:
            writer.writerow([
                row.epoch,
                f"{row.train_loss:.10f}",
                "" if row.valid_mrr is None else f"{row.valid_mrr:.10f}",
            ])
