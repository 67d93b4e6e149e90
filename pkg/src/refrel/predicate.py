"""Predicate analysis over subject/object proposal pairs.

The map classifier stacks two ``(H, W, D)`` region maps depth-wise and runs
three 3x3 convolutions, a 1x1 projection to ``P + 1`` channels and a spatial
mean. Each output is an independent sigmoid; the last one is background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .boxes import Box, pairwise_iou
from .errors import NonFiniteError, ShapeMismatchError, TrainingDataError
from .neural import AdamState, ConvNet, MLP, adam_step, sigmoid, sigmoid_ce_loss
from .neural.nets import convnet_from_params, mlp_from_params
from .validation import check_array, check_binary, check_same_length

POSITIVE = "positive"
NEG_WRONG_ENTITY = "neg_wrong_entity"
NEG_NO_RELATION = "neg_no_relation"

VECTOR_MODES = {
    "vec_spatial_phrase": (True, True),
    "vec_spatial": (True, False),
    "vec_phrase": (False, True),
    "vec": (False, False),
}


def stack_pair(subject_map, object_map):
    """Depth-wise concatenation; subject channels first."""
    a = np.asarray(subject_map, dtype=np.float64)
    b = np.asarray(object_map, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"subject map {a.shape} and object map {b.shape} differ")
    return np.concatenate([a, b], axis=-1)


def predicate_forward(params, pair_tensor):
    """Per-class confidences ``(P + 1,)`` (or ``(n, P + 1)`` for a batch)."""
    net = convnet_from_params(params)
    x = np.asarray(pair_tensor, dtype=np.float64)
    if x.shape[-1] != net.in_ch:
        raise ShapeMismatchError(f"pair tensor has {x.shape[-1]} channels, expected {net.in_ch}")
    logits, _ = net.forward(x)
    probs = sigmoid(logits)
    return probs[0] if x.ndim == 3 else probs


def pair_vector(mode, f_i, s_i, f_j, s_j, e_s, e_o):
    """Flat pair representation for the vector ablation variants."""
    if mode not in VECTOR_MODES:
        raise ValueError(f"unknown vector mode {mode!r}; expected one of {sorted(VECTOR_MODES)}")
    use_spatial, use_phrase = VECTOR_MODES[mode]
    parts = [f_i, f_j]
    if use_spatial:
        parts += [s_i, s_j]
    if use_phrase:
        parts += [e_s, e_o]
    return np.concatenate([np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in parts], axis=1)


def vector_variant_forward(params_v, f_i, s_i, f_j, s_j, e_s, e_o, mode):
    x = pair_vector(mode, f_i, s_i, f_j, s_j, e_s, e_o)
    mlp = mlp_from_params(params_v)
    if x.shape[1] != mlp.in_dim:
        raise ShapeMismatchError(f"mode {mode!r} builds {x.shape[1]} inputs, network expects {mlp.in_dim}")
    logits, _ = mlp.forward(x)
    probs = sigmoid(logits)
    return probs[0] if probs.shape[0] == 1 else probs


class _MultiLabelTrainer:
    """Shared sigmoid-CE / Adam loop for the two predicate classifiers."""

    def _train(self, net, X, Y, rng):
        state = AdamState(lr=self.learning_rate)
        params = net.parameters()
        n = len(X)
        order = rng.permutation(n)
        cursor = 0
        self.loss_curve_ = []
        bs = min(self.batch_size, n)
        for _ in range(self.max_iter):
            if cursor + bs > n:
                order = rng.permutation(n)
                cursor = 0
            idx = order[cursor:cursor + bs]
            cursor += bs
            logits, cache = net.forward(X[idx])
            loss, d_logits = sigmoid_ce_loss(logits, Y[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"predicate loss became non-finite at iteration {len(self.loss_curve_)}")
            grads, _ = net.backward(cache, d_logits)
            adam_step(state, params, grads)
            self.loss_curve_.append(loss)

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def predict(self, X):
        """Most confident non-background predicate per pair."""
        return np.argmax(self.predict_proba(X)[:, : self.n_predicates], axis=1)


class PredicateClassifier(_MultiLabelTrainer, BaseEstimator):
    """Conv classifier over stacked pair maps ``(n, H, W, 2D)`` with ``P + 1`` sigmoid outputs."""

    def __init__(self, n_predicates=5, channels=32, max_iter=1500, batch_size=32,
                 learning_rate=1e-3, random_state=0):
        self.n_predicates = n_predicates
        self.channels = channels
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, Y):
        X = check_array(X, ndim=4, name="pair tensors")
        Y = check_binary(Y, name="predicate labels")
        check_same_length(X, Y)
        if Y.ndim != 2 or Y.shape[1] != self.n_predicates + 1:
            raise ShapeMismatchError(f"labels must be (n, {self.n_predicates + 1}), got {Y.shape}")
        if len(X) == 0:
            raise TrainingDataError("empty predicate training set")
        rng = np.random.default_rng(self.random_state)
        net = ConvNet(X.shape[-1], self.channels, self.n_predicates + 1, rng=rng)
        self.n_features_in_ = X.shape[-1]
        self._train(net, X, Y, rng)
        self.params_ = net.parameters()
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, name="pair tensors")
        if X.shape[-1] != self.n_features_in_:
            raise ShapeMismatchError(f"pair tensors need {self.n_features_in_} channels, got {X.shape[-1]}")
        xb = X[None] if X.ndim == 3 else X
        net = convnet_from_params(self.params_)
        out = np.concatenate([net.forward(xb[i:i + 512])[0] for i in range(0, len(xb), 512)])
        return out[0] if X.ndim == 3 else out


class VectorPredicateClassifier(_MultiLabelTrainer, BaseEstimator):
    """MLP over flat pair vectors (see :func:`pair_vector`); an ablation baseline."""

    def __init__(self, mode="vec_spatial_phrase", n_predicates=5, hidden_dim=128, n_hidden=3,
                 max_iter=1500, batch_size=32, learning_rate=1e-3, random_state=0):
        self.mode = mode
        self.n_predicates = n_predicates
        self.hidden_dim = hidden_dim
        self.n_hidden = n_hidden
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, Y):
        if self.mode not in VECTOR_MODES:
            raise ValueError(f"unknown vector mode {self.mode!r}")
        X = check_array(X, ndim=2, name="pair vectors")
        Y = check_binary(Y, name="predicate labels")
        check_same_length(X, Y)
        if len(X) == 0:
            raise TrainingDataError("empty predicate training set")
        rng = np.random.default_rng(self.random_state)
        dims = [X.shape[1]] + [self.hidden_dim] * self.n_hidden + [self.n_predicates + 1]
        net = MLP(dims, rng=rng)
        self.n_features_in_ = X.shape[1]
        self._train(net, X, Y, rng)
        self.params_ = net.parameters()
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, ndim=2, last_dim=self.n_features_in_, name="pair vectors")
        return mlp_from_params(self.params_).forward(X)[0]


# training pairs ---------------------------------------------------------------


@dataclass(eq=False)
class PairSample:
    subject_map: np.ndarray
    object_map: np.ndarray
    label_vector: np.ndarray  # (P + 1,) binary
    provenance: str
    scene_id: int = -1
    subject_box: Box = None
    object_box: Box = None
    subject_vector: np.ndarray = field(default=None, repr=False)
    object_vector: np.ndarray = field(default=None, repr=False)
    subject_category: int = -1
    object_category: int = -1

    @property
    def tensor(self):
        return stack_pair(self.subject_map, self.object_map)


def predicate_sets(scene):
    """``{(subject_idx, object_idx): set(predicate ids)}`` for every related entity pair."""
    out = {}
    for s, p, o in scene.relations:
        out.setdefault((s, o), set()).add(p)
    return out


def label_vector(predicates, num_predicates):
    v = np.zeros(num_predicates + 1)
    if predicates:
        v[sorted(predicates)] = 1.0
    else:
        v[num_predicates] = 1.0
    return v


def classify_pair(scene, query, sub_box, obj_box, iou_threshold=0.5):
    """Label one candidate pair for ``query``.

    Returns ``(provenance, predicate ids)``. Positive iff both boxes reach the
    IoU threshold against the two entities of a single relation instance of
    the queried triple; the label then carries every predicate that instance
    pair satisfies. Negatives are ``neg_no_relation`` when both boxes land on
    distinct entities that share no relation at all, else ``neg_wrong_entity``.
    """
    ent_boxes = np.array([list(e.box) for e in scene.entities])
    iou_s = pairwise_iou(np.asarray(list(sub_box), dtype=np.float64), ent_boxes)[0]
    iou_o = pairwise_iou(np.asarray(list(obj_box), dtype=np.float64), ent_boxes)[0]
    return _classify(iou_s, iou_o, query.pairs, predicate_sets(scene), iou_threshold)


def _classify(iou_s, iou_o, pairs, rels, iou_threshold):
    best = None
    for s, o in pairs:
        if iou_s[s] >= iou_threshold and iou_o[o] >= iou_threshold:
            score = min(iou_s[s], iou_o[o])
            if best is None or score > best[0]:
                best = (score, s, o)
    if best is not None:
        return POSITIVE, rels[(best[1], best[2])]
    s_hit, o_hit = int(iou_s.argmax()), int(iou_o.argmax())
    if (iou_s[s_hit] >= iou_threshold and iou_o[o_hit] >= iou_threshold and s_hit != o_hit
            and (s_hit, o_hit) not in rels):
        return NEG_NO_RELATION, set()
    return NEG_WRONG_ENTITY, set()


def balance_samples(samples, rng):
    """Subsample negatives to the positive count, split evenly across the two negative types."""
    pos = [s for s in samples if s.provenance == POSITIVE]
    if not pos:
        raise TrainingDataError("no positive pairs; the proposal stage is too weak to train predicates")
    wrong = [s for s in samples if s.provenance == NEG_WRONG_ENTITY]
    norel = [s for s in samples if s.provenance == NEG_NO_RELATION]
    n = len(pos)
    take_norel = min(len(norel), n // 2)
    take_wrong = min(len(wrong), n - take_norel)
    take_norel = min(len(norel), n - take_wrong)
    picked_w = [wrong[i] for i in sorted(rng.choice(len(wrong), take_wrong, replace=False))] if take_wrong else []
    picked_n = [norel[i] for i in sorted(rng.choice(len(norel), take_norel, replace=False))] if take_norel else []
    return pos + picked_w + picked_n


def build_training_pairs(dataset, queries, selector, num_predicates, k=5, rng_seed=0, balance=True):
    """Enumerate the ``k x k`` top-ranked subject/object pairs of every query.

    ``selector`` is a :class:`refrel.proposal.TopKSelector` (or anything with
    ``select(scene_id, role, category, k)`` and ``features(scene_id, boxes)``).
    Pairs repeated across queries of one scene are merged, keeping the
    positive label when any query marks the pair positive.
    """
    rng = np.random.default_rng(rng_seed)
    merged = {}
    for q in queries:
        scene = dataset.scenes[q.scene_id]
        rels = predicate_sets(scene)
        ent_boxes = np.array([list(e.box) for e in scene.entities])
        subs = selector.select(q.scene_id, "subject", q.subject_category, k)
        objs = selector.select(q.scene_id, "object", q.object_category, k)
        iou_s = pairwise_iou(np.array([list(sp.refined_box) for sp in subs]), ent_boxes)
        iou_o = pairwise_iou(np.array([list(op.refined_box) for op in objs]), ent_boxes)
        for si, sp in enumerate(subs):
            for oi, op in enumerate(objs):
                key = (q.scene_id, q.subject_category, q.object_category, sp.proposal_index, op.proposal_index)
                prev = merged.get(key)
                if prev is not None and prev[0] == POSITIVE:
                    continue
                prov, preds = _classify(iou_s[si], iou_o[oi], q.pairs, rels, 0.5)
                if prev is None or prov == POSITIVE:
                    merged[key] = (prov, preds, q, si, oi)
    samples = []
    for key in sorted(merged):
        prov, preds, q, si, oi = merged[key]
        smaps, svecs, subs = selector.selection_features(q.scene_id, "subject", q.subject_category, k)
        omaps, ovecs, objs = selector.selection_features(q.scene_id, "object", q.object_category, k)
        samples.append(PairSample(
            smaps[si], omaps[oi], label_vector(preds, num_predicates), prov, q.scene_id,
            subs[si].refined_box, objs[oi].refined_box, svecs[si], ovecs[oi],
            q.subject_category, q.object_category,
        ))
    return balance_samples(samples, rng) if balance else samples


def gt_pair_samples(dataset, scene_ids, selector, num_predicates, rng_seed=0, balance=True):
    """Pairs built from ground-truth entity boxes.

    Positives are related entity pairs; ``neg_no_relation`` are unrelated
    entity pairs; ``neg_wrong_entity`` pair an entity with a proposal that
    overlaps no entity at IoU >= 0.5.
    """
    rng = np.random.default_rng(rng_seed)
    samples = []
    for sid in scene_ids:
        scene = dataset.scenes[sid]
        rels = predicate_sets(scene)
        boxes = [e.box for e in scene.entities]
        props = dataset.proposals[sid].boxes
        ent_arr = np.array([list(b) for b in boxes])
        off = np.flatnonzero(pairwise_iou(props, ent_arr).max(axis=1) < 0.5)
        maps, vecs = selector.features(sid, boxes)
        cats = [e.category_id for e in scene.entities]
        for s in range(len(boxes)):
            for o in range(len(boxes)):
                if s == o:
                    continue
                preds = rels.get((s, o), set())
                prov = POSITIVE if preds else NEG_NO_RELATION
                samples.append(PairSample(maps[s], maps[o], label_vector(preds, num_predicates), prov, sid,
                                          boxes[s], boxes[o], vecs[s], vecs[o], cats[s], cats[o]))
            if len(off):
                j = int(off[rng.integers(len(off))])
                wb = Box.from_array(props[j])
                wmap, wvec = selector.features(sid, [wb])
                first_sub = bool(rng.integers(2))
                o = int(rng.integers(len(boxes)))
                a, b = ((maps[s], vecs[s], boxes[s], cats[s]), (wmap[0], wvec[0], wb, cats[o]))
                if not first_sub:
                    a, b = b, a
                samples.append(PairSample(a[0], b[0], label_vector(set(), num_predicates), NEG_WRONG_ENTITY,
                                          sid, a[2], b[2], a[1], b[1], a[3], b[3]))
    return balance_samples(samples, rng) if balance else samples


def samples_to_arrays(samples):
    X = np.stack([s.tensor for s in samples])
    Y = np.stack([s.label_vector for s in samples])
    return X, Y


def samples_to_vectors(samples, mode, phrase_subject, phrase_object, image_size):
    """Flat inputs for a vector variant; phrase lookups map category -> embedding."""
    from .boxes import spatial_features

    f_i = np.stack([s.subject_vector for s in samples])
    f_j = np.stack([s.object_vector for s in samples])
    s_i = spatial_features([s.subject_box for s in samples], *image_size)
    s_j = spatial_features([s.object_box for s in samples], *image_size)
    e_s = np.stack([phrase_subject(s.subject_category) for s in samples])
    e_o = np.stack([phrase_object(s.object_category) for s in samples])
    X = pair_vector(mode, f_i, s_i, f_j, s_j, e_s, e_o)
    Y = np.stack([s.label_vector for s in samples])
    return X, Y


def predicate_recall(probs, labels, k, num_predicates):
    """Share of pairs whose top-``k`` non-background predicates include a true one."""
    probs = np.asarray(probs)[:, :num_predicates]
    labels = np.asarray(labels)[:, :num_predicates]
    if len(probs) == 0:
        return 0.0
    top = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    hits = np.take_along_axis(labels, top, axis=1).max(axis=1) > 0
    return float(hits.mean())
