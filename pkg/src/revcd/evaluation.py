"""Nearest-neighbor classification of sampled semantics and GZSL metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClassPrototypes:
    """Per-class attribute rows plus the seen/unseen partition."""

    attributes: np.ndarray  # [n_classes, d_s]
    class_ids: np.ndarray   # [n_classes]
    seen_ids: frozenset[int]
    unseen_ids: frozenset[int]

    def __post_init__(self):
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.seen_ids & self.unseen_ids:
            raise ValueError("seen and unseen class sets must be disjoint")
        norms = np.linalg.norm(self.attributes, axis=1)
        if np.any(norms == 0):
            raise ValueError("all-zero attribute row: cosine distance undefined")

    @classmethod
    def from_dataset(cls, dataset) -> "ClassPrototypes":
        return cls(attributes=dataset.attributes,
                   class_ids=np.arange(dataset.attributes.shape[0]),
                   seen_ids=frozenset(int(c) for c in dataset.seen_classes),
                   unseen_ids=frozenset(int(c) for c in dataset.unseen_classes))


@dataclass
class GzslMetrics:
    S: float
    U: float
    H: float
    zsl_unseen: float = 0.0
    per_class: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"S": self.S, "U": self.U, "H": self.H,
                "zsl_unseen": self.zsl_unseen, "per_class": self.per_class}


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - <a, b> / (||a|| ||b||), in [0, 2]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine distance undefined for zero-norm input")
    return float(1.0 - np.dot(a, b) / (na * nb))


def cosine_distance_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine distances between two [n, d] arrays.

    Zero-norm rows are treated as maximally distant (distance 1) rather
    than erroring, since clipped running estimates can transiently hit 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    sim = np.zeros(len(a))
    ok = denom > 0
    sim[ok] = np.einsum("ij,ij->i", a[ok], b[ok]) / denom[ok]
    return 1.0 - sim


def _candidate_ids(prototypes: ClassPrototypes, mode: str) -> np.ndarray:
    if mode == "zsl":
        wanted = prototypes.unseen_ids
    elif mode == "gzsl":
        wanted = prototypes.seen_ids | prototypes.unseen_ids
    else:
        raise ValueError(f"unknown mode '{mode}'")
    mask = np.array([int(c) in wanted for c in prototypes.class_ids])
    return np.where(mask)[0]


def nn_classify(s_hat: np.ndarray, prototypes: ClassPrototypes,
                mode: str = "gzsl") -> np.ndarray:
    """Cosine nearest-neighbor class per row; ties break to the lowest id.

    Accepts a single vector or a [n, d] batch.
    """
    s_hat = np.asarray(s_hat, dtype=np.float64)
    single = s_hat.ndim == 1
    if single:
        s_hat = s_hat[None, :]
    if np.any(np.linalg.norm(s_hat, axis=1) == 0):
        raise ValueError("zero-norm query")

    rows = _candidate_ids(prototypes, mode)
    # candidate ids are sorted, so argmin's first-match rule is the
    # lowest-class-id tie-break
    order = np.argsort(prototypes.class_ids[rows], kind="stable")
    rows = rows[order]
    cand = prototypes.attributes[rows]
    sim = (s_hat @ cand.T) / (np.linalg.norm(s_hat, axis=1)[:, None]
                              * np.linalg.norm(cand, axis=1)[None, :])
    picked = prototypes.class_ids[rows[np.argmin(1.0 - sim, axis=1)]]
    return picked[0] if single else picked


def per_class_accuracy(predictions: np.ndarray, truths: np.ndarray,
                       class_ids) -> float:
    """Unweighted mean of per-class accuracies over the given classes."""
    class_ids = sorted(int(c) for c in class_ids)
    if not class_ids:
        raise ValueError("empty class set")
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    unknown = set(np.unique(truths).tolist()) - set(class_ids)
    if unknown:
        raise ValueError(f"truth labels outside class set: {sorted(unknown)}")
    accs = []
    for c in class_ids:
        rows = truths == c
        if rows.sum() == 0:
            continue
        accs.append(float(np.mean(predictions[rows] == c)))
    return float(np.mean(accs))


def harmonic_mean(S: float, U: float) -> float:
    """2SU / (S + U); zero when either accuracy is zero."""
    if S + U == 0:
        return 0.0
    return 2.0 * S * U / (S + U)


def evaluate(dataset, sampler, guidance_seed: int = 0,
             n_draws: int = 1) -> GzslMetrics:
    """Sample semantics for every test visual and classify them.

    ``sampler(features, row_indices) -> [n, d_s] semantics`` abstracts the
    generative model so oracle/stub samplers can exercise the metric path.
    ``n_draws > 1`` averages several sampled semantics per image before
    classification.
    """
    prototypes = ClassPrototypes.from_dataset(dataset)

    def sample_rows(rows: np.ndarray) -> np.ndarray:
        feats = dataset.features[rows]
        acc = None
        for _ in range(n_draws):
            draw = np.asarray(sampler(feats, rows), dtype=np.float64)
            acc = draw if acc is None else acc + draw
        return acc / n_draws

    seen_rows = dataset.test_seen
    unseen_rows = dataset.test_unseen

    s_seen = sample_rows(seen_rows)
    s_unseen = sample_rows(unseen_rows)

    pred_seen = nn_classify(s_seen, prototypes, mode="gzsl")
    pred_unseen = nn_classify(s_unseen, prototypes, mode="gzsl")
    pred_zsl = nn_classify(s_unseen, prototypes, mode="zsl")

    y_seen = dataset.labels[seen_rows]
    y_unseen = dataset.labels[unseen_rows]

    S = per_class_accuracy(pred_seen, y_seen, dataset.seen_classes)
    U = per_class_accuracy(pred_unseen, y_unseen, dataset.unseen_classes)
    zsl = per_class_accuracy(pred_zsl, y_unseen, dataset.unseen_classes)

    per_class = []
    for split, preds, ys, ids in (("seen", pred_seen, y_seen,
                                   dataset.seen_classes),
                                  ("unseen", pred_unseen, y_unseen,
                                   dataset.unseen_classes)):
        for c in sorted(int(i) for i in ids):
            rows = ys == c
            if rows.sum() == 0:
                continue
            per_class.append({"class_id": c, "split": split,
                              "accuracy": float(np.mean(preds[rows] == c)),
                              "n": int(rows.sum())})

    return GzslMetrics(S=S, U=U, H=harmonic_mean(S, U), zsl_unseen=zsl,
                       per_class=per_class)


def model_sampler(model, schedule, guidance):
    """Default sampler closing over a trained model."""
    from .rng import RngState
    from .sampling import sample

    def _sampler(features: np.ndarray, rows: np.ndarray) -> np.ndarray:
        rng = RngState(guidance.seed)
        return sample(features, model, schedule, guidance, rng=rng)

    return _sampler
