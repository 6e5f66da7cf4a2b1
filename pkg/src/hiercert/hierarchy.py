"""Hierarchical classifiers over label equivalence classes.

A hierarchy is a tree: intermediate nodes route an input to the
equivalence class it belongs to, leaves predict a label within their
class. Certification composes by taking the minimum certified radius
along the root-to-leaf path; a leaf over a reduced label set can only
widen the top-vs-runner-up margin, which is where the robustness gain
comes from.

Leaf classifiers always speak the local label space (index i means
label_subset[i]); a renormalizing leaf is the base classifier masked to
its subset, a retrained leaf is a fresh model fit on in-class samples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import rng
from .core import CertifiedPrediction, LabelPartition, as_probability_vector, normalize_subset
from .errors import RoutingMismatchError, ValidationError
from .models import MaskedModel, PgdParams, pgd_attack, train
from .smoothing import margin_radius

RENORMALIZE = "renormalize"
RETRAIN = "retrain"

WORST_CASE = "worst_case"
BUDGETED = "budgeted"


@dataclass(frozen=True)
class Leaf:
    """Terminal node predicting within one equivalence class."""

    label_subset: tuple[int, ...]
    strategy: str = RENORMALIZE
    classifier: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "label_subset", tuple(int(i) for i in self.label_subset))
        if self.strategy not in (RENORMALIZE, RETRAIN):
            raise ValidationError(f"unknown leaf strategy {self.strategy!r}")
        if len(self.label_subset) == 1:
            if self.classifier is not None:
                raise ValidationError("singleton leaves carry no classifier")
        else:
            if self.classifier is None:
                raise ValidationError("multi-label leaves need a classifier")
            if self.classifier.n_labels != len(self.label_subset):
                raise ValidationError("leaf classifier arity must match its label subset")


@dataclass(frozen=True)
class Intermediate:
    """Routing node; child i handles the i-th equivalence class below it."""

    classifier: object
    children: tuple["Node", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValidationError("intermediate nodes need at least 2 children")
        if self.classifier.n_labels != len(self.children):
            raise ValidationError("routing arity must equal the child count")


Node = Union[Leaf, Intermediate]


def node_label_set(node: Node) -> tuple[int, ...]:
    if isinstance(node, Leaf):
        return node.label_subset
    out: list[int] = []
    for child in node.children:
        out.extend(node_label_set(child))
    return tuple(sorted(out))


@dataclass(frozen=True)
class Hierarchy:
    """A finite routing tree whose leaf subsets partition the label space."""

    root: Node
    n_labels: int

    def __post_init__(self):
        labels = node_label_set(self.root)
        if labels != tuple(range(self.n_labels)):
            raise ValidationError(
                "leaf subsets must partition the label space "
                f"0..{self.n_labels - 1}, got {labels}"
            )

    def leaves(self) -> list[Leaf]:
        out: list[Leaf] = []

        def walk(node: Node):
            if isinstance(node, Leaf):
                out.append(node)
            else:
                for child in node.children:
                    walk(child)

        walk(self.root)
        return out

    def partition(self) -> LabelPartition:
        return LabelPartition(tuple(l.label_subset for l in self.leaves()),
                             n_labels=self.n_labels)

    def nodes(self) -> list[tuple[str, Node]]:
        """(id, node) pairs; ids are 'root', 'root.0', 'root.0.1', ..."""
        out: list[tuple[str, Node]] = []

        def walk(node: Node, nid: str):
            out.append((nid, node))
            if isinstance(node, Intermediate):
                for i, child in enumerate(node.children):
                    walk(child, f"{nid}.{i}")

        walk(self.root, "root")
        return out


def build_renormalize_hierarchy(partition: LabelPartition, root_classifier,
                                base_classifier) -> Hierarchy:
    """Two-level hierarchy: route by partition class, renormalize the base model."""
    children = []
    for subset in partition.classes:
        if len(subset) == 1:
            children.append(Leaf(subset, strategy=RENORMALIZE))
        else:
            children.append(Leaf(subset, strategy=RENORMALIZE,
                                 classifier=MaskedModel(base_classifier, subset)))
    root = Intermediate(classifier=root_classifier, children=tuple(children))
    return Hierarchy(root=root, n_labels=partition.n_labels)


def flat_hierarchy(classifier) -> Hierarchy:
    """Degenerate one-leaf hierarchy: identical to the flat base classifier."""
    subset = tuple(range(classifier.n_labels))
    leaf = Leaf(subset, strategy=RENORMALIZE,
                classifier=MaskedModel(classifier, subset))
    return Hierarchy(root=leaf, n_labels=classifier.n_labels)


def infer_batch(h: Hierarchy, X: np.ndarray) -> np.ndarray:
    """Root-to-leaf inference for a batch; returns global label indices."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(X.shape[0], dtype=np.int64)

    def walk(node: Node, idx: np.ndarray):
        if idx.size == 0:
            return
        if isinstance(node, Leaf):
            if len(node.label_subset) == 1:
                out[idx] = node.label_subset[0]
            else:
                local = np.argmax(node.classifier.logits(X[idx]), axis=1)
                out[idx] = np.asarray(node.label_subset)[local]
            return
        branch = np.argmax(node.classifier.logits(X[idx]), axis=1)
        for i, child in enumerate(node.children):
            walk(child, idx[branch == i])

    walk(h.root, np.arange(X.shape[0]))
    return out


def infer(h: Hierarchy, x) -> int:
    """Single-input inference; singleton leaves skip classifier evaluation."""
    return int(infer_batch(h, np.asarray(x, dtype=np.float64)[None, :])[0])


def leaf_certificate_renormalized(smoothed_probs, subset: Iterable[int],
                                  sigma: float) -> CertifiedPrediction:
    """Two-sided certificate of the top label within a subset.

    The probability estimates are the baseline classifier's; estimates
    outside the subset are discarded and the margin is taken between the
    top and runner-up that remain (the estimates themselves are not
    rescaled, which is what makes the bound valid). The global argmax must
    lie inside the subset; otherwise the sample was routed wrong and is a
    misclassification, not a certificate.
    """
    probs = as_probability_vector(smoothed_probs)
    s = normalize_subset(subset, probs.size)
    g = int(np.argmax(probs))
    if g not in s:
        raise RoutingMismatchError(f"argmax {g} outside routed subset {s}")
    if len(s) == 1:
        return CertifiedPrediction(label=g, radius=math.inf,
                                   p_a_lower=float(probs[g]), sigma=sigma)
    competitors = [i for i in s if i != g]
    p_top = float(probs[g])
    p_runner = float(probs[competitors].max())
    return CertifiedPrediction(label=g, radius=margin_radius(sigma, p_top, p_runner),
                               p_a_lower=p_top, sigma=sigma)


def hierarchy_certificate(node_radii: Sequence[float]) -> float:
    """Composed certificate of a root-to-leaf path: the minimum entry."""
    radii = list(node_radii)
    if not radii:
        raise ValidationError("need at least one per-classifier radius")
    for r in radii:
        if not (r >= 0.0):
            raise ValidationError(f"radii must be nonnegative, got {r!r}")
    return min(radii)


@dataclass(frozen=True)
class SizeStats:
    """Radius statistics for one subset size in a sweep."""

    size: int
    n_finite: int
    n_infinite: int
    mean: float
    std: float
    q25: float
    median: float
    q75: float


def _sample_subsets(m: int, size: int, count: int, seed: int) -> list[tuple[int, ...]]:
    total = math.comb(m, size)
    if total <= count:
        return [tuple(c) for c in itertools.combinations(range(m), size)]
    seen: set[tuple[int, ...]] = set()
    out: list[tuple[int, ...]] = []
    t = 0
    while len(out) < count and t < 64 * count:
        u = rng.uniforms(seed, rng.STREAM_SUBSETS, t * m, m)
        subset = tuple(sorted(np.argsort(u, kind="stable")[:size].tolist()))
        if subset not in seen:
            seen.add(subset)
            out.append(subset)
        t += 1
    return out


def subset_radius_sweep(probs_dataset, sigma: float, sizes: Sequence[int],
                        mode: str = "all", sample_count: int = 500,
                        seed: int = 0,
                        max_evaluations: int = 10_000_000) -> dict[int, SizeStats]:
    """Renormalized-radius statistics over label subsets of each size.

    For every subset (all of them, or a seeded sample of `sample_count`
    per size) and every datapoint whose argmax lies in the subset, the
    two-sided within-subset radius is computed. Singleton subsets yield
    +inf radii, which are counted separately and excluded from the
    statistics. Shrinking the subset size can only grow the mean radius.
    """
    P = np.atleast_2d(np.asarray(probs_dataset, dtype=np.float64))
    n, m = P.shape
    if mode not in ("all", "sampled"):
        raise ValidationError(f"unknown sweep mode {mode!r}")
    sizes = [int(s) for s in sizes]
    for s in sizes:
        if not 1 <= s <= m:
            raise ValidationError(f"subset size {s} outside 1..{m}")
        if mode == "all" and math.comb(m, s) * n > max_evaluations:
            raise ValidationError(
                f"all-subsets sweep at size {s} needs {math.comb(m, s) * n} "
                f"evaluations (> {max_evaluations}); use mode='sampled'"
            )

    g = np.argmax(P, axis=1)
    p_top = P[np.arange(n), g]
    out: dict[int, SizeStats] = {}
    for s in sizes:
        if mode == "all":
            subsets = [tuple(c) for c in itertools.combinations(range(m), s)]
        else:
            subsets = _sample_subsets(m, s, sample_count, seed + s)
        finite: list[np.ndarray] = []
        n_inf = 0
        for subset in subsets:
            cols = np.fromiter(subset, dtype=np.int64)
            member = np.isin(g, cols)
            if not member.any():
                continue
            if s == 1:
                n_inf += int(member.sum())
                continue
            sub = P[np.ix_(member, cols)]
            if s == 2:
                runner = sub.min(axis=1)
            else:
                runner = np.partition(sub, -2, axis=1)[:, -2]
            radii = margin_radius(sigma, p_top[member], runner)
            inf_mask = np.isinf(radii)
            n_inf += int(inf_mask.sum())
            finite.append(radii[~inf_mask])
        values = np.concatenate(finite) if finite else np.empty(0)
        if values.size:
            q25, med, q75 = np.percentile(values, [25, 50, 75])
            stats = SizeStats(size=s, n_finite=values.size, n_infinite=n_inf,
                              mean=float(values.mean()), std=float(values.std()),
                              q25=float(q25), median=float(med), q75=float(q75))
        else:
            stats = SizeStats(size=s, n_finite=0, n_infinite=n_inf,
                              mean=math.nan, std=math.nan,
                              q25=math.nan, median=math.nan, q75=math.nan)
        out[s] = stats
    return out


def refine_partition(first: LabelPartition, second: LabelPartition) -> LabelPartition:
    """Stack two partitions: classes are the nonempty pairwise intersections.

    Intersection is symmetric, so the induced leaf label sets do not depend
    on which partition routes first; only their order differs.
    """
    if first.n_labels != second.n_labels:
        raise ValidationError("partitions cover different label spaces")
    classes = []
    for a in first.classes:
        for b in second.classes:
            inter = tuple(sorted(set(a) & set(b)))
            if inter:
                classes.append(inter)
    return LabelPartition(tuple(classes), n_labels=first.n_labels)


@dataclass(frozen=True)
class AttackScenario:
    """Which classifiers the adversary may perturb, and with what budget."""

    mode: str
    attack: PgdParams
    budget_target: Optional[str] = None

    def __post_init__(self):
        if self.mode not in (WORST_CASE, BUDGETED):
            raise ValidationError(f"unknown attack mode {self.mode!r}")
        if self.mode == BUDGETED and not self.budget_target:
            raise ValidationError("budgeted attacks need a target node id (or 'worst')")


@dataclass(frozen=True)
class AdversarialReport:
    natural_acc: float
    adv_acc: Optional[float] = None
    budget_acc: Optional[float] = None
    per_node: Optional[dict] = None


def _path_for_label(h: Hierarchy, label: int) -> list[tuple[str, Node, int]]:
    """(node id, node, local target) along the label's root-to-leaf path.

    For intermediates the local target is the correct child index; for the
    leaf it is the label's index within the leaf subset.
    """
    path = []
    node, nid = h.root, "root"
    while isinstance(node, Intermediate):
        child_idx = None
        for i, child in enumerate(node.children):
            if label in node_label_set(child):
                child_idx = i
                break
        if child_idx is None:
            raise ValidationError(f"label {label} not under node {nid}")
        path.append((nid, node, child_idx))
        node = node.children[child_idx]
        nid = f"{nid}.{child_idx}"
    path.append((nid, node, node.label_subset.index(label)))
    return path


def _node_correct_under_attack(node: Node, X: np.ndarray, targets: np.ndarray,
                               attack: PgdParams, seed: int) -> np.ndarray:
    """Per-sample: does the node still produce its local target after PGD?

    Singleton leaves have no classifier and cannot be attacked."""
    if isinstance(node, Leaf) and len(node.label_subset) == 1:
        return np.ones(X.shape[0], dtype=bool)
    model = node.classifier
    x_adv = pgd_attack(model, X, targets, attack, seed=seed)
    pred = np.argmax(model.logits(x_adv), axis=1)
    return pred == targets


def _node_correct_clean(node: Node, X: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if isinstance(node, Leaf) and len(node.label_subset) == 1:
        return np.ones(X.shape[0], dtype=bool)
    pred = np.argmax(node.classifier.logits(X), axis=1)
    return pred == targets


def evaluate_adversarial(h: Hierarchy, X, y, scenario: AttackScenario,
                         seed: int = 0) -> AdversarialReport:
    """Natural and adversarial accuracy of a hierarchy of built-in models.

    Worst case: every classifier on a sample's true path is attacked
    independently from the clean input; the sample counts as correct only
    if all of them still decide correctly. Budgeted: only the designated
    node is attacked, every other classifier sees the clean input; the
    target 'worst' tries each node and reports the most damaging one.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    natural = float(np.mean(infer_batch(h, X) == y))

    # Group samples by true label so each shares a root-to-leaf path.
    paths = {label: _path_for_label(h, int(label)) for label in np.unique(y)}

    def correctness(attacked_id: Optional[str]) -> np.ndarray:
        """attacked_id None: attack every path node (worst case)."""
        ok = np.ones(X.shape[0], dtype=bool)
        for label, path in paths.items():
            idx = np.flatnonzero(y == label)
            for nid, node, target in path:
                targets = np.full(idx.size, target, dtype=np.int64)
                if attacked_id is None or nid == attacked_id:
                    good = _node_correct_under_attack(node, X[idx], targets,
                                                      scenario.attack, seed)
                else:
                    good = _node_correct_clean(node, X[idx], targets)
                ok[idx] &= good
        return ok

    if scenario.mode == WORST_CASE:
        return AdversarialReport(natural_acc=natural,
                                 adv_acc=float(np.mean(correctness(None))))

    node_ids = [nid for nid, _ in h.nodes()]
    if scenario.budget_target == "worst":
        per_node = {nid: float(np.mean(correctness(nid))) for nid in node_ids}
        worst = min(per_node.values())
        return AdversarialReport(natural_acc=natural, budget_acc=worst,
                                 per_node=per_node)
    if scenario.budget_target not in node_ids:
        raise ValidationError(f"no node named {scenario.budget_target!r}; "
                              f"known ids: {node_ids}")
    acc = float(np.mean(correctness(scenario.budget_target)))
    return AdversarialReport(natural_acc=natural, budget_acc=acc)


def retrain_leaf(X, y, subset: Iterable[int], hidden: int = 0, epochs: int = 500,
                 learning_rate: float = 0.5, noise_sigma: float | None = None,
                 seed: int = 0):
    """Fit a fresh leaf model on the samples of one equivalence class.

    Labels are re-indexed to the subset; the returned model speaks the
    local label space. Returns None when fewer than two distinct labels
    are present (the singleton-leaf directive: no classifier is needed).
    """
    from .models import LinearSoftmax, SmallMlp  # local to avoid cycle noise

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    s = normalize_subset(subset, int(y.max()) + 1 if y.size else 1)
    member = np.isin(y, np.fromiter(s, dtype=np.int64))
    Xs, ys = X[member], y[member]
    if np.unique(ys).size < 2:
        return None
    local = {lab: i for i, lab in enumerate(s)}
    y_local = np.fromiter((local[int(v)] for v in ys), dtype=np.int64)
    if hidden > 0:
        model = SmallMlp.init(len(s), X.shape[1], hidden, seed)
    else:
        model = LinearSoftmax.init(len(s), X.shape[1], seed)
    return train(model, Xs, y_local, epochs=epochs, learning_rate=learning_rate,
                 noise_sigma=noise_sigma, seed=seed)


@dataclass(frozen=True)
class ClassReport:
    """Baseline-vs-hierarchy certificate summary for one equivalence class."""

    class_index: int
    labels: tuple[int, ...]
    n_samples: int
    routing_acc: float
    baseline_cr_mean: float
    baseline_cr_std: float
    hierarchy_cr_mean: float
    hierarchy_cr_std: float
    baseline_ca: tuple[float, ...]
    hierarchy_ca: tuple[float, ...]


def renormalization_report(probs, labels, partition: LabelPartition, sigma: float,
                           thresholds: Sequence[float]) -> list[ClassReport]:
    """Per-class certified radius and accuracy, baseline vs renormalized leaf.

    Baseline certificates use the global runner-up; hierarchy certificates
    use the runner-up within the routed class (the class of the predicted
    label). A sample routed outside its true class is a misclassification
    and contributes no certificate. Mean/std exclude infinite radii.
    """
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    n, m = P.shape
    if partition.n_labels != m:
        raise ValidationError("partition does not match probability width")

    g = np.argmax(P, axis=1)
    order = np.argsort(P, axis=1)
    p_top = P[np.arange(n), g]
    p_second = P[np.arange(n), order[:, -2]] if m > 1 else np.zeros(n)
    base_radius = margin_radius(sigma, p_top, p_second)

    class_of = np.empty(m, dtype=np.int64)
    for ci, c in enumerate(partition.classes):
        class_of[list(c)] = ci

    hier_radius = np.empty(n)
    for i in range(n):
        subset = partition.classes[class_of[g[i]]]
        cert = leaf_certificate_renormalized(P[i], subset, sigma)
        hier_radius[i] = cert.radius
    correct = g == y
    routed = class_of[g] == class_of[y]

    def _stats(vals: np.ndarray) -> tuple[float, float]:
        finite = vals[np.isfinite(vals)]
        if finite.size == 0:
            return math.nan, math.nan
        return float(finite.mean()), float(finite.std())

    reports = []
    for ci, c in enumerate(partition.classes):
        sel = np.flatnonzero(np.isin(y, np.fromiter(c, dtype=np.int64)))
        if sel.size == 0:
            continue
        ok = correct[sel]
        b_mean, b_std = _stats(base_radius[sel][ok])
        h_mean, h_std = _stats(hier_radius[sel][ok])
        base_ca = tuple(float(np.mean(ok & (base_radius[sel] >= t))) for t in thresholds)
        hier_ca = tuple(float(np.mean(ok & (hier_radius[sel] >= t))) for t in thresholds)
        reports.append(ClassReport(
            class_index=ci, labels=c, n_samples=int(sel.size),
            routing_acc=float(np.mean(routed[sel])),
            baseline_cr_mean=b_mean, baseline_cr_std=b_std,
            hierarchy_cr_mean=h_mean, hierarchy_cr_std=h_std,
            baseline_ca=base_ca, hierarchy_ca=hier_ca,
        ))
    return reports
