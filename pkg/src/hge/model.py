"""Embedding tables, attention mixing and scoring.

A model holds one shared pair of (real, imaginary) vectors per entity and per
time point; the three geometric views (complex, split-complex, dual) reuse
those same vectors. Each relation carries a static embedding, a dynamic
embedding that is complex-multiplied with the query's time embedding, and a
2d attention weight that blends the two into the hybrid relation. A second
attention then weighs the per-geometry scores into the final scalar.

Scoring variants range from the full attention-mixed product space down to
single-geometry and classic tensor-factorization collapse cases; see
``Variant``. The relation table is doubled: row p + n_relations holds the
reciprocal of relation p (used for subject-side queries and training).

ModelState may be shared read-only across threads during evaluation; training
mutates it from a single writer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .algebra import Geometry, mul_arrays
from .data import Quadruple

__all__ = [
    "PairVector",
    "RelationParams",
    "Variant",
    "Composition",
    "ModelState",
    "ScoreBreakdown",
    "GEOMETRY_ORDER",
    "temporal_relational_attention",
    "geometry_products",
    "temporal_geometric_attention",
    "score",
    "score_breakdown",
    "score_all_objects",
    "save_checkpoint",
    "load_checkpoint",
]

#: Fixed reporting order for per-geometry quantities (beta etc.).
GEOMETRY_ORDER = (Geometry.COMPLEX, Geometry.SPLIT_COMPLEX, Geometry.DUAL)


@dataclass
class PairVector:
    """A d-dimensional vector of (real, imaginary) component pairs."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape or self.a.ndim != 1 or self.a.size == 0:
            raise ValueError("PairVector halves must be equal-length 1-d vectors")

    @property
    def d(self) -> int:
        return self.a.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    def copy(self) -> "PairVector":
        return PairVector(self.a.copy(), self.b.copy())


@dataclass
class RelationParams:
    """Per-relation parameters: static vector, dynamic vector, attention weight."""

    static: PairVector
    dynamic: PairVector
    weight: np.ndarray  # (2d,) attention weight

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.static.d != self.dynamic.d or self.weight.shape != (2 * self.static.d,):
            raise ValueError("RelationParams members must share the model dimension")


class Variant(Enum):
    """Scoring variant.

    HGE_FULL        both attentions over all three geometries.
    TRA_ONLY        relation attention only, complex geometry (== SINGLE_COMPLEX).
    TGA_ONLY        geometric attention only; hybrid relation fixed to p_c*tau + p_s.
    STACK           three geometries on disjoint equal dimension blocks, summed.
    SINGLE_*        relation attention, one geometry, no geometric attention.
    TCOMPLEX        complex geometry, hybrid = p_c*tau (pure 4-way factorization).
    TNTCOMPLEX      complex geometry, hybrid = p_c*tau + p_s.
    """

    HGE_FULL = "hge_full"
    TRA_ONLY = "tra_only"
    TGA_ONLY = "tga_only"
    STACK = "stack"
    SINGLE_COMPLEX = "single_complex"
    SINGLE_SPLIT = "single_split"
    SINGLE_DUAL = "single_dual"
    TCOMPLEX = "tcomplex"
    TNTCOMPLEX = "tntcomplex"


class Composition(Enum):
    """How the hybrid relation is built from (p_s, p_c, tau)."""

    ATTENTION = "attention"       # softmax blend of p_c*tau and p_s
    STATIC_DYNAMIC_SUM = "sum"    # p_c*tau + p_s
    DYNAMIC_ONLY = "dynamic"      # p_c*tau


class VariantSpec(NamedTuple):
    composition: Composition
    geometries: tuple[Geometry, ...]
    geo_attention: bool
    stacked: bool


_C, _S, _D = GEOMETRY_ORDER
_VARIANTS = {
    Variant.HGE_FULL: VariantSpec(Composition.ATTENTION, (_C, _S, _D), True, False),
    Variant.TRA_ONLY: VariantSpec(Composition.ATTENTION, (_C,), False, False),
    Variant.TGA_ONLY: VariantSpec(Composition.STATIC_DYNAMIC_SUM, (_C, _S, _D), True, False),
    Variant.STACK: VariantSpec(Composition.STATIC_DYNAMIC_SUM, (_C, _S, _D), False, True),
    Variant.SINGLE_COMPLEX: VariantSpec(Composition.ATTENTION, (_C,), False, False),
    Variant.SINGLE_SPLIT: VariantSpec(Composition.ATTENTION, (_S,), False, False),
    Variant.SINGLE_DUAL: VariantSpec(Composition.ATTENTION, (_D,), False, False),
    Variant.TCOMPLEX: VariantSpec(Composition.DYNAMIC_ONLY, (_C,), False, False),
    Variant.TNTCOMPLEX: VariantSpec(Composition.STATIC_DYNAMIC_SUM, (_C,), False, False),
}


def variant_spec(variant: Variant) -> VariantSpec:
    return _VARIANTS[variant]


@dataclass
class ModelState:
    """All embedding tables plus hyperparameters; the single trainable object.

    Tables are float64 arrays: entity/time pair tables of shape (n, d) per
    half, relation tables of shape (2 * n_relations, d) per half plus the
    (2 * n_relations, 2d) attention weights.
    """

    d: int
    n_entities: int
    n_relations: int  # base relations; the tables hold 2x rows
    n_times: int
    variant: Variant
    seed: int
    ent_a: np.ndarray
    ent_b: np.ndarray
    rel_s_a: np.ndarray
    rel_s_b: np.ndarray
    rel_c_a: np.ndarray
    rel_c_b: np.ndarray
    rel_w: np.ndarray
    time_a: np.ndarray
    time_b: np.ndarray

    INIT_STD = 1e-2

    @classmethod
    def create(
        cls,
        n_entities: int,
        n_relations: int,
        n_times: int,
        d: int,
        variant: Variant = Variant.HGE_FULL,
        seed: int = 0,
    ) -> "ModelState":
        """Fresh model: embeddings i.i.d. N(0, 1e-2), attention weights zero
        (uniform attention at step 0)."""
        if min(n_entities, n_relations, n_times, d) < 1:
            raise ValueError("table sizes and dimension must be positive")
        if variant is Variant.STACK and d % 3 != 0:
            raise ValueError("STACK requires the dimension to be divisible by 3")
        rng = np.random.default_rng(seed)
        nr = 2 * n_relations

        def tbl(n):
            return rng.normal(0.0, cls.INIT_STD, size=(n, d))

        return cls(
            d=d, n_entities=n_entities, n_relations=n_relations, n_times=n_times,
            variant=variant, seed=seed,
            ent_a=tbl(n_entities), ent_b=tbl(n_entities),
            rel_s_a=tbl(nr), rel_s_b=tbl(nr),
            rel_c_a=tbl(nr), rel_c_b=tbl(nr),
            rel_w=np.zeros((nr, 2 * d)),
            time_a=tbl(n_times), time_b=tbl(n_times),
        )

    @property
    def n_relation_rows(self) -> int:
        return 2 * self.n_relations

    def reciprocal(self, p: int) -> int:
        """Row id of the reciprocal of relation row ``p``."""
        return p + self.n_relations if p < self.n_relations else p - self.n_relations

    def entity(self, i: int) -> PairVector:
        self._check(i, self.n_entities, "entity")
        return PairVector(self.ent_a[i], self.ent_b[i])

    def relation(self, j: int) -> RelationParams:
        self._check(j, self.n_relation_rows, "relation")
        return RelationParams(
            static=PairVector(self.rel_s_a[j], self.rel_s_b[j]),
            dynamic=PairVector(self.rel_c_a[j], self.rel_c_b[j]),
            weight=self.rel_w[j],
        )

    def time(self, k: int) -> PairVector:
        self._check(k, self.n_times, "time")
        return PairVector(self.time_a[k], self.time_b[k])

    @staticmethod
    def _check(i: int, n: int, what: str) -> None:
        if not 0 <= i < n:
            raise IndexError(f"{what} id {i} out of range [0, {n})")

    def tables(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _TABLE_NAMES}

    def copy(self) -> "ModelState":
        kw = {name: getattr(self, name).copy() for name in _TABLE_NAMES}
        return ModelState(
            d=self.d, n_entities=self.n_entities, n_relations=self.n_relations,
            n_times=self.n_times, variant=self.variant, seed=self.seed, **kw,
        )


_TABLE_NAMES = (
    "ent_a", "ent_b", "rel_s_a", "rel_s_b", "rel_c_a", "rel_c_b",
    "rel_w", "time_a", "time_b",
)


def _softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def temporal_relational_attention(
    r: RelationParams, tau: PairVector
) -> tuple[PairVector, float, float]:
    """Blend static and time-modulated relation vectors by learned attention.

    Returns (hybrid relation, alpha_time, alpha_static) where the alphas are
    the softmax of the relation weight dotted with each candidate vector and
    the hybrid is their convex combination.
    """
    if r.static.d != tau.d:
        raise ValueError(
            f"dimension mismatch: relation d={r.static.d}, time d={tau.d}"
        )
    dyn_a, dyn_b = mul_arrays(Geometry.COMPLEX, r.dynamic.a, r.dynamic.b, tau.a, tau.b)
    dyn = PairVector(dyn_a, dyn_b)
    logit_t = float(r.weight @ dyn.flatten())
    logit_s = float(r.weight @ r.static.flatten())
    alpha = _softmax(np.array([logit_t, logit_s]))
    hybrid = PairVector(
        alpha[0] * dyn.a + alpha[1] * r.static.a,
        alpha[0] * dyn.b + alpha[1] * r.static.b,
    )
    return hybrid, float(alpha[0]), float(alpha[1])


def compose_relation(
    r: RelationParams, tau: PairVector, composition: Composition
) -> tuple[PairVector, float, float]:
    """Hybrid relation under the given composition rule.

    Fixed compositions report diagnostic alphas: (1, 1) for the
    static+dynamic sum, (1, 0) for the dynamic-only collapse.
    """
    if composition is Composition.ATTENTION:
        return temporal_relational_attention(r, tau)
    dyn_a, dyn_b = mul_arrays(Geometry.COMPLEX, r.dynamic.a, r.dynamic.b, tau.a, tau.b)
    if composition is Composition.STATIC_DYNAMIC_SUM:
        return PairVector(dyn_a + r.static.a, dyn_b + r.static.b), 1.0, 1.0
    return PairVector(dyn_a, dyn_b), 1.0, 0.0


def geometry_products(
    s: PairVector, hybrid: PairVector, o: PairVector, variant: Variant
) -> dict[Geometry, PairVector]:
    """Per-dimension three-way products c_g = s * hybrid * o for each active
    geometry (full width; STACK applies its dimension blocks at score time)."""
    products = {}
    for g in variant_spec(variant).geometries:
        xa, xb = mul_arrays(g, s.a, s.b, hybrid.a, hybrid.b)
        ca, cb = mul_arrays(g, xa, xb, o.a, o.b)
        products[g] = PairVector(ca, cb)
    return products


def temporal_geometric_attention(
    hybrid: PairVector, products: dict[Geometry, PairVector]
) -> np.ndarray:
    """Softmax over the three geometry logits <flatten(hybrid), flatten(c_g)>."""
    missing = [g for g in GEOMETRY_ORDER if g not in products]
    if missing:
        raise ValueError(f"products must cover all three geometries; missing {missing}")
    flat = hybrid.flatten()
    logits = np.array([flat @ products[g].flatten() for g in GEOMETRY_ORDER])
    return _softmax(logits)


def _stack_blocks(d: int) -> dict[Geometry, slice]:
    w = d // 3
    return {g: slice(i * w, (i + 1) * w) for i, g in enumerate(GEOMETRY_ORDER)}


@dataclass
class ScoreBreakdown:
    """All intermediates behind one score.

    ``beta`` follows GEOMETRY_ORDER. For softmax variants it is the geometric
    attention; SINGLE_* report a one-hot, STACK reports unit weights (its
    blocks are summed, not mixed). ``alpha_*`` likewise are softmax weights
    only under the attention composition.
    """

    products: dict[Geometry, PairVector]
    beta: np.ndarray
    hybrid: PairVector
    alpha_time: float
    alpha_static: float
    total: float


def score_breakdown(m: ModelState, q: Quadruple) -> ScoreBreakdown:
    """Reference per-query scorer returning every intermediate."""
    spec = variant_spec(m.variant)
    s, o = m.entity(q.s), m.entity(q.o)
    tau = m.time(q.t)
    rel = m.relation(q.p)
    hybrid, a_t, a_s = compose_relation(rel, tau, spec.composition)
    products = geometry_products(s, hybrid, o, m.variant)

    beta = np.zeros(3)
    if spec.geo_attention:
        beta = temporal_geometric_attention(hybrid, products)
        total = sum(
            beta[i] * float(np.sum(products[g].a))
            for i, g in enumerate(GEOMETRY_ORDER)
        )
    elif spec.stacked:
        beta = np.ones(3)
        blocks = _stack_blocks(m.d)
        total = sum(float(np.sum(products[g].a[blocks[g]])) for g in GEOMETRY_ORDER)
    else:
        g = spec.geometries[0]
        beta[GEOMETRY_ORDER.index(g)] = 1.0
        total = float(np.sum(products[g].a))
    return ScoreBreakdown(products, beta, hybrid, a_t, a_s, total)


def score(m: ModelState, q: Quadruple) -> float:
    """Scalar plausibility of one quadruple (bit-equal to its breakdown total)."""
    return score_breakdown(m, q).total


class BatchForward(NamedTuple):
    """Intermediates of the vectorized all-objects forward pass (batch of B
    queries against all entities). Per-geometry lists follow the variant's
    active geometry order; entries are (B, block)-shaped."""

    s_idx: np.ndarray
    r_idx: np.ndarray
    t_idx: np.ndarray
    dyn_a: np.ndarray
    dyn_b: np.ndarray
    alpha: Optional[np.ndarray]   # (B, 2) softmax weights, attention only
    q_a: np.ndarray
    q_b: np.ndarray
    x_a: list[np.ndarray]
    x_b: list[np.ndarray]
    raw: list[np.ndarray]         # (B, n_entities) per geometry
    u: list[np.ndarray]
    v: list[np.ndarray]
    beta: Optional[np.ndarray]    # (B, n_entities, n_geo)
    scores: np.ndarray            # (B, n_entities)


def batch_forward(
    m: ModelState, s_idx: np.ndarray, r_idx: np.ndarray, t_idx: np.ndarray
) -> BatchForward:
    """Score a batch of (subject, relation, time) queries against every object."""
    spec = variant_spec(m.variant)
    sa, sb = m.ent_a[s_idx], m.ent_b[s_idx]
    ta, tb = m.time_a[t_idx], m.time_b[t_idx]
    pca, pcb = m.rel_c_a[r_idx], m.rel_c_b[r_idx]
    psa, psb = m.rel_s_a[r_idx], m.rel_s_b[r_idx]
    d = m.d

    dyn_a, dyn_b = mul_arrays(Geometry.COMPLEX, pca, pcb, ta, tb)
    alpha = None
    if spec.composition is Composition.ATTENTION:
        w = m.rel_w[r_idx]
        lt = np.sum(w[:, :d] * dyn_a + w[:, d:] * dyn_b, axis=1)
        ls = np.sum(w[:, :d] * psa + w[:, d:] * psb, axis=1)
        alpha = _softmax(np.stack([lt, ls], axis=1), axis=1)
        q_a = alpha[:, :1] * dyn_a + alpha[:, 1:] * psa
        q_b = alpha[:, :1] * dyn_b + alpha[:, 1:] * psb
    elif spec.composition is Composition.STATIC_DYNAMIC_SUM:
        q_a, q_b = dyn_a + psa, dyn_b + psb
    else:
        q_a, q_b = dyn_a, dyn_b

    blocks = _stack_blocks(d) if spec.stacked else None
    x_a, x_b, raw, u, v = [], [], [], [], []
    for g in spec.geometries:
        sl = blocks[g] if blocks else slice(None)
        gg = g.unit_square
        xa, xb = mul_arrays(g, sa[:, sl], sb[:, sl], q_a[:, sl], q_b[:, sl])
        ea, eb = m.ent_a[:, sl], m.ent_b[:, sl]
        r_g = xa @ ea.T + (gg * (xb @ eb.T) if gg else 0.0)
        x_a.append(xa)
        x_b.append(xb)
        raw.append(r_g)
        if spec.geo_attention:
            qga, qgb = q_a[:, sl], q_b[:, sl]
            ug = qga * xa + qgb * xb
            vg = gg * (qga * xb) + qgb * xa
            u.append(ug)
            v.append(vg)

    if spec.geo_attention:
        logits = np.stack([ug @ m.ent_a.T + vg @ m.ent_b.T for ug, vg in zip(u, v)],
                          axis=2)
        beta = _softmax(logits, axis=2)
        scores = np.einsum("bek,bek->be", beta, np.stack(raw, axis=2))
    else:
        beta = None
        scores = raw[0] if len(raw) == 1 else sum(raw)

    return BatchForward(s_idx, r_idx, t_idx, dyn_a, dyn_b, alpha, q_a, q_b,
                        x_a, x_b, raw, u, v, beta, scores)


def score_all_objects(m: ModelState, s: int, r: int, t: int) -> np.ndarray:
    """Scores of (s, r, o, t) for every candidate object o, as one vector."""
    m._check(s, m.n_entities, "entity")
    m._check(r, m.n_relation_rows, "relation")
    m._check(t, m.n_times, "time")
    idx = np.array([s]), np.array([r]), np.array([t])
    return batch_forward(m, *idx).scores[0]


CHECKPOINT_FORMAT = 1


def save_checkpoint(m: ModelState, path) -> None:
    """Write the model to an npz container with a self-describing header."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "d": m.d,
        "n_entities": m.n_entities,
        "n_relations": m.n_relations,
        "n_times": m.n_times,
        "variant": m.variant.value,
        "seed": m.seed,
    }
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **m.tables())


def load_checkpoint(path) -> ModelState:
    with np.load(path) as archive:
        meta = json.loads(archive["meta"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {meta.get('format')}")
        tables = {name: archive[name] for name in _TABLE_NAMES}
    return ModelState(
        d=meta["d"], n_entities=meta["n_entities"], n_relations=meta["n_relations"],
        n_times=meta["n_times"], variant=Variant(meta["variant"]), seed=meta["seed"],
        **tables,
    )
