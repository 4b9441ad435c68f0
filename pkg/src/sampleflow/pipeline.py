"""Two-stage semi-supervised training, evaluation, and the KNN baseline."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import (FEATURE_ORDER_VERSION, input_matrix, normalize_targets,
                       stat_features)
from .flows import Flow
from .neural import (Adam, Network, build_classifier, build_regressor,
                     cross_entropy_loss, init_params, mse_loss, transfer_trunk)
from .sampling import (SamplingSpec, augment, derive_rng, spec_from_dict,
                       spec_to_dict)

logger = logging.getLogger(__name__)


class EmptyDatasetError(ValueError):
    pass


class LabelError(ValueError):
    pass


class CoverageError(ValueError):
    pass


class EmptyEvalError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    sampling: SamplingSpec
    seed: int
    window: int = 45
    copies: int = 100
    pretrain_epochs: int = 300
    retrain_epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    freeze_trunk: bool = False
    labeled_flows_per_class: int = 20

    def __post_init__(self):
        for name in ("window", "copies", "pretrain_epochs", "retrain_epochs",
                     "batch_size", "labeled_flows_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampling"] = spec_to_dict(self.sampling)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["sampling"] = spec_from_dict(d["sampling"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def build_regression_dataset(flows: list[Flow], cfg: TrainConfig
                             ) -> tuple[np.ndarray, np.ndarray]:
    """(input matrix, normalized stat-vector target) pairs over sampled copies."""
    xs, ys = [], []
    for flow in flows:
        target = normalize_targets(stat_features(flow))
        rng = derive_rng(cfg.seed, flow.id)
        for sf in augment(flow, cfg.sampling, cfg.window, cfg.copies, rng):
            xs.append(input_matrix(sf, flow).data)
            ys.append(target)
    if not xs:
        raise EmptyDatasetError("no sampled copies could be built")
    return np.stack(xs), np.stack(ys)


def build_classification_dataset(flows: list[Flow], classes: list[str],
                                 cfg: TrainConfig
                                 ) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Sampled copies with inherited labels; also returns per-copy flow ids."""
    class_index = {c: i for i, c in enumerate(classes)}
    xs, ys, ids = [], [], []
    for flow in flows:
        if flow.label not in class_index:
            raise LabelError(f"flow {flow.id} has unknown label {flow.label!r}")
        rng = derive_rng(cfg.seed, flow.id)
        for sf in augment(flow, cfg.sampling, cfg.window, cfg.copies, rng):
            xs.append(input_matrix(sf, flow).data)
            ys.append(class_index[flow.label])
            ids.append(flow.id)
    if not xs:
        raise EmptyDatasetError("no sampled copies could be built")
    return np.stack(xs), np.array(ys, dtype=int), ids


def _train_network(net: Network, x: np.ndarray, y: np.ndarray, loss_fn,
                   epochs: int, cfg: TrainConfig, shuffle_seed: int
                   ) -> list[float]:
    optimizer = Adam(net.params(trainable_only=True), lr=cfg.lr)
    rng = np.random.default_rng(shuffle_seed)
    history = []
    net.train()
    n = x.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs more than one value
            optimizer.zero_grad()
            pred = net.forward(x[idx])
            loss, dpred = loss_fn(pred, y[idx])
            net.backward(dpred)
            optimizer.step()
            losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(mean_loss)
        logger.info("epoch %d/%d loss %.6f", epoch + 1, epochs, mean_loss)
    net.eval()
    return history


def pretrain(unlabeled: list[Flow], cfg: TrainConfig) -> Network:
    """Train the regressor to predict flow statistics from sampled windows."""
    if not unlabeled:
        raise EmptyDatasetError("no flows to pretrain on")
    x, y = build_regression_dataset(unlabeled, cfg)
    net = init_params(build_regressor(cfg.window), cfg.seed)
    history = _train_network(net, x, y, mse_loss, cfg.pretrain_epochs, cfg,
                             shuffle_seed=cfg.seed + 1)
    net.meta.update({"train_config": cfg.to_dict(),
                     "feature_order_version": FEATURE_ORDER_VERSION})
    net.history = history
    return net


def _train_classifier(labeled: list[Flow], classes: list[str],
                      cfg: TrainConfig, pretrained: Network | None) -> Network:
    if len(set(classes)) != len(classes):
        raise LabelError("duplicate class names")
    have = {f.label for f in labeled}
    missing = [c for c in classes if c not in have]
    if missing:
        raise CoverageError(f"no labeled flows for classes {missing}")
    x, y, _ = build_classification_dataset(labeled, classes, cfg)
    net = init_params(build_classifier(cfg.window, len(classes)), cfg.seed + 2)
    if pretrained is not None:
        transfer_trunk(pretrained, net, freeze=cfg.freeze_trunk)
    history = _train_network(net, x, y, cross_entropy_loss, cfg.retrain_epochs,
                             cfg, shuffle_seed=cfg.seed + 3)
    net.meta.update({"train_config": cfg.to_dict(), "classes": list(classes),
                     "feature_order_version": FEATURE_ORDER_VERSION,
                     "pretrained": pretrained is not None})
    net.history = history
    return net


def retrain(pretrained: Network, labeled: list[Flow], classes: list[str],
            cfg: TrainConfig) -> Network:
    """Transfer the conv trunk and train a classifier head on labeled flows."""
    return _train_classifier(labeled, classes, cfg, pretrained)


def train_supervised_baseline(labeled: list[Flow], classes: list[str],
                              cfg: TrainConfig) -> Network:
    """Same architecture and schedule as retrain, without weight transfer."""
    return _train_classifier(labeled, classes, cfg, None)


def _predict_batched(net: Network, x: np.ndarray,
                     batch: int = 512) -> np.ndarray:
    net.eval()
    out = []
    for lo in range(0, x.shape[0], batch):
        out.append(net.forward(x[lo:lo + batch]).argmax(axis=1))
    return np.concatenate(out)


def classify(model: Network, flow: Flow, cfg: TrainConfig,
             vote: str = "majority"):
    """Predict a flow's class from its sampled copies.

    vote="per_sample" returns the list of per-copy predictions;
    vote="majority" returns the modal class (ties: lowest class index).
    """
    classes = model.meta.get("classes")
    if classes is None:
        raise ValueError("model carries no class list")
    rng = derive_rng(cfg.seed, flow.id)
    copies = augment(flow, cfg.sampling, cfg.window, cfg.copies, rng)
    x = np.stack([input_matrix(sf, flow).data for sf in copies])
    preds = _predict_batched(model, x)
    if vote == "per_sample":
        return [classes[i] for i in preds]
    if vote == "majority":
        return classes[int(np.bincount(preds, minlength=len(classes)).argmax())]
    raise ValueError(f"unknown vote mode {vote!r}")


@dataclass
class EvalReport:
    classes: list[str]
    macro_accuracy: float
    per_class: dict
    confusion: list[list[int]]
    n_sampled: int
    n_flows: int
    flow_majority_accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_metrics(confusion: np.ndarray, classes: list[str]) -> tuple:
    """Per-class one-vs-rest metrics and macro accuracy (mean recall)."""
    total = int(confusion.sum())
    per_class = {}
    recalls = []

    def ratio(num, den):
        return (num / den, False) if den > 0 else (0.0, True)

    for i, name in enumerate(classes):
        tp = int(confusion[i, i])
        fn = int(confusion[i].sum()) - tp
        fp = int(confusion[:, i].sum()) - tp
        tn = total - tp - fn - fp
        precision, p_zero = ratio(tp, tp + fp)
        recall, r_zero = ratio(tp, tp + fn)
        f1, f_zero = ratio(2 * precision * recall, precision + recall)
        accuracy, _ = ratio(tp + tn, total)
        flags = [n for n, z in (("precision", p_zero), ("recall", r_zero),
                                ("f1", f_zero)) if z]
        per_class[name] = {"accuracy": accuracy, "precision": precision,
                           "recall": recall, "f1": f1,
                           "zero_division": flags}
        recalls.append(recall)
    return float(np.mean(recalls)), per_class


def evaluate(model: Network, test_flows: list[Flow], classes: list[str],
             cfg: TrainConfig) -> EvalReport:
    """Copy-level confusion and metrics, plus flow-level majority accuracy."""
    if not test_flows:
        raise EmptyEvalError("empty test set")
    x, y, ids = build_classification_dataset(test_flows, classes, cfg)
    preds = _predict_batched(model, x)
    k = len(classes)
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (y, preds), 1)
    macro, per_class = confusion_metrics(confusion, classes)

    id_order = []
    by_flow: dict[str, list[tuple[int, int]]] = {}
    for fid, t, p in zip(ids, y, preds):
        if fid not in by_flow:
            by_flow[fid] = []
            id_order.append(fid)
        by_flow[fid].append((t, p))
    votes_right = 0
    for fid in id_order:
        pairs = by_flow[fid]
        true = pairs[0][0]
        counts = np.bincount([p for _, p in pairs], minlength=k)
        if int(counts.argmax()) == true:
            votes_right += 1
    return EvalReport(
        classes=list(classes),
        macro_accuracy=macro,
        per_class=per_class,
        confusion=confusion.tolist(),
        n_sampled=int(x.shape[0]),
        n_flows=len(id_order),
        flow_majority_accuracy=votes_right / len(id_order),
    )


def split_per_class(flows: list[Flow], n_train_per_class: int, seed: int
                    ) -> tuple[list[Flow], list[Flow]]:
    """Seeded per-class split: exactly n_train_per_class flows into train."""
    by_class: dict[str, list[Flow]] = {}
    for f in flows:
        if f.label is None:
            raise LabelError(f"flow {f.id} has no label")
        by_class.setdefault(f.label, []).append(f)
    rng = np.random.default_rng(seed)
    train_ids = set()
    for label in sorted(by_class):
        group = by_class[label]
        if n_train_per_class > 0 and len(group) <= n_train_per_class:
            raise CoverageError(
                f"class {label!r} has only {len(group)} flows, need more than "
                f"{n_train_per_class}")
        chosen = rng.choice(len(group), size=n_train_per_class, replace=False)
        train_ids.update(group[i].id for i in chosen)
    train = [f for f in flows if f.id in train_ids]
    test = [f for f in flows if f.id not in train_ids]
    return train, test


class KnnClassifier:
    """K-nearest-neighbor vote over normalized statistical feature vectors.

    Distance ties keep training insertion order; vote ties fall back to the
    nearest neighbor's class.
    """

    def __init__(self, train_stats: list[tuple[np.ndarray, str]], k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        if not train_stats:
            raise EmptyDatasetError("no training vectors")
        self.x = np.stack([v for v, _ in train_stats])
        self.labels = [lab for _, lab in train_stats]
        self.k = min(k, len(self.labels))

    def predict(self, vec: np.ndarray) -> str:
        d = np.linalg.norm(self.x - vec, axis=1)
        order = np.argsort(d, kind="stable")[:self.k]
        neighbor_labels = [self.labels[i] for i in order]
        counts: dict[str, int] = {}
        for lab in neighbor_labels:
            counts[lab] = counts.get(lab, 0) + 1
        best = max(counts.values())
        tied = [lab for lab, c in counts.items() if c == best]
        if len(tied) == 1:
            return tied[0]
        return neighbor_labels[0]

    def predict_many(self, vecs: np.ndarray) -> list[str]:
        return [self.predict(v) for v in vecs]


def knn_baseline(train_stats: list[tuple[np.ndarray, str]],
                 k: int = 5) -> KnnClassifier:
    return KnnClassifier(train_stats, k)


def flow_stat_vectors(flows: list[Flow]) -> list[tuple[np.ndarray, str]]:
    return [(normalize_targets(stat_features(f)), f.label) for f in flows]
