"""Category-conditioned proposal scoring and box refinement.

One :class:`CategoryProposalModel` scores every candidate region of an image
for a single entity category (the subject or the object phrase of a query)
and regresses offsets that tighten the region. Two independent instances are
trained, one on subject annotations and one on object annotations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .boxes import Box, as_boxes, decode_offsets, encode_offsets, nms, pairwise_iou
from .errors import ShapeMismatchError, TrainingDataError
from .neural import AdamState, MLP, adam_step, sigmoid, sigmoid_ce_loss, smooth_l1_loss
from .neural.nets import mlp_from_params
from .scene_synth import EmbeddingTable, embed_phrase
from .validation import check_array, check_finite, check_same_length


class ProposalGroup(NamedTuple):
    """Candidates of one image, paired with the queried category."""

    inputs: np.ndarray  # (N, D_v + 5): pooled feature || spatial feature
    boxes: np.ndarray  # (N, 4)
    category: int
    image_size: tuple

    @classmethod
    def from_proposals(cls, proposal_set, category):
        return cls(proposal_set.inputs, proposal_set.boxes, int(category), tuple(proposal_set.image_size))


@dataclass(frozen=True)
class ScoredProposal:
    proposal_index: int
    confidence: float
    offsets: np.ndarray
    box: Box
    refined_box: Box


def assign_labels(proposals, gt_boxes, tau=0.5):
    """Multi-label assignment: every proposal with max IoU >= ``tau`` is positive.

    Returns ``(labels, matched)``; ``matched[i]`` is the index of the best
    ground-truth box for positives (lowest index on ties) and -1 otherwise.
    """
    gt = as_boxes(gt_boxes)
    if len(gt) == 0:
        raise ValueError("assign_labels needs at least one ground-truth box")
    iou = pairwise_iou(as_boxes(proposals), gt)
    best = iou.argmax(axis=1)
    labels = (iou.max(axis=1) >= tau).astype(np.int64)
    matched = np.where(labels == 1, best, -1)
    return labels, matched


def forward(params, inputs, phrase_vec):
    """Confidence ``sigmoid(c)`` and offsets ``t`` for each row of ``inputs``.

    ``params`` is the name -> array dict of a fitted model; the phrase vector
    is appended to every row before the first (multimodal) layer.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    phrase = np.asarray(phrase_vec, dtype=np.float64)
    mlp = mlp_from_params(params)
    if x.shape[1] + phrase.shape[-1] != mlp.in_dim:
        raise ShapeMismatchError(
            f"input width {x.shape[1]} + phrase width {phrase.shape[-1]} != {mlp.in_dim}"
        )
    out, _ = mlp.forward(np.concatenate([x, np.broadcast_to(phrase, (len(x), phrase.shape[-1]))], axis=1))
    return sigmoid(out[:, 0]), out[:, 1:]


class CategoryProposalModel(BaseEstimator):
    """Five-layer MLP over ``[pooled visual feature, 5-D spatial feature, phrase embedding]``.

    Output per candidate: one confidence logit and four box offsets.

    Parameters
    ----------
    n_categories : int
        Vocabulary size of the learned phrase-embedding table.
    embed_dim : int
        Phrase embedding width.
    hidden_dim, n_hidden : int
        Width of the multimodal layer and of the ``n_hidden`` hidden layers.
    pos_iou_threshold : float
        Candidates with IoU >= this against a ground-truth box are positives.
    neg_ratio : int
        Negatives sampled per positive for each training query.
    max_iter, batch_size, learning_rate :
        Adam schedule; ``batch_size`` counts queries, not candidates.
    reg_weight : float
        Multiplier on the smooth-L1 regression term.
    top_k, nms_threshold :
        Test-time selection defaults for :meth:`rank_and_select`.
    """

    def __init__(
        self,
        n_categories=6,
        embed_dim=32,
        hidden_dim=128,
        n_hidden=3,
        pos_iou_threshold=0.5,
        neg_ratio=3,
        max_iter=2000,
        batch_size=32,
        learning_rate=1e-4,
        reg_weight=1.0,
        top_k=5,
        nms_threshold=0.5,
        random_state=0,
    ):
        self.n_categories = n_categories
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.n_hidden = n_hidden
        self.pos_iou_threshold = pos_iou_threshold
        self.neg_ratio = neg_ratio
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.reg_weight = reg_weight
        self.top_k = top_k
        self.nms_threshold = nms_threshold
        self.random_state = random_state

    # parameters -----------------------------------------------------------

    def _init_params(self, in_dim, rng):
        dims = [in_dim + self.embed_dim] + [self.hidden_dim] * (self.n_hidden + 1) + [5]
        table = EmbeddingTable.init(self.n_categories, self.embed_dim, rng)
        mlp = MLP(dims, rng=rng)
        params = {"embedding.weights": table.weights}
        params.update(mlp.parameters())
        return params

    def _mlp(self):
        return mlp_from_params(self.params_)

    @property
    def embedding_(self):
        return EmbeddingTable(self.params_["embedding.weights"])

    def phrase_vector(self, category):
        check_is_fitted(self, "params_")
        return embed_phrase(category, self.embedding_)

    # training -------------------------------------------------------------

    def fit(self, X, y):
        """Train on ``X`` (list of :class:`ProposalGroup`) against ``y`` (gt boxes per group)."""
        X = list(X)
        y = [as_boxes(g) for g in y]
        check_same_length(X, y)
        if not X:
            raise TrainingDataError("no training queries")
        in_dim = X[0].inputs.shape[1]
        for g in X:
            check_array(g.inputs, ndim=2, last_dim=in_dim, name="ProposalGroup.inputs")
            if not 0 <= g.category < self.n_categories:
                raise ValueError(f"category {g.category} outside vocabulary")
        rng = np.random.default_rng(self.random_state)
        self.params_ = self._init_params(in_dim, rng)
        self.n_features_in_ = in_dim

        pos_idx, neg_idx, targets = [], [], []
        for g, gt in zip(X, y):
            labels, matched = assign_labels(g.boxes, gt, self.pos_iou_threshold)
            p = np.flatnonzero(labels == 1)
            pos_idx.append(p)
            neg_idx.append(np.flatnonzero(labels == 0))
            targets.append(encode_offsets(g.boxes[p], gt[matched[p]]) if len(p) else np.zeros((0, 4)))
        if sum(len(p) for p in pos_idx) == 0:
            raise TrainingDataError("no positive candidates in the training set; check proposal coverage")

        state = AdamState(lr=self.learning_rate)
        order = rng.permutation(len(X))
        cursor = 0
        self.loss_curve_ = []
        for _ in range(self.max_iter):
            if cursor + self.batch_size > len(order):
                order = rng.permutation(len(X))
                cursor = 0
            batch = order[cursor:cursor + self.batch_size]
            cursor += self.batch_size
            rows, cats, labels, reg_rows, reg_t = [], [], [], [], []
            offset = 0
            for gi in batch:
                g = X[gi]
                p, n = pos_idx[gi], neg_idx[gi]
                k = min(len(n), self.neg_ratio * max(len(p), 1))
                sel_n = rng.choice(n, size=k, replace=False) if k else n[:0]
                idx = np.concatenate([p, sel_n])
                rows.append(g.inputs[idx])
                cats.append(np.full(len(idx), g.category))
                labels.append(np.concatenate([np.ones(len(p)), np.zeros(len(sel_n))]))
                reg_rows.append(offset + np.arange(len(p)))
                reg_t.append(targets[gi])
                offset += len(idx)
            self.loss_curve_.append(self._step(state, np.concatenate(rows), np.concatenate(cats),
                                               np.concatenate(labels), np.concatenate(reg_rows),
                                               np.concatenate(reg_t)))
        return self

    def _step(self, state, inputs, cats, labels, reg_rows, reg_targets):
        table = self.params_["embedding.weights"]
        x = np.concatenate([inputs, table[cats]], axis=1)
        mlp = self._mlp()
        out, cache = mlp.forward(x)
        cls_loss, d_logit = sigmoid_ce_loss(out[:, 0], labels)
        d_out = np.zeros_like(out)
        d_out[:, 0] = d_logit
        reg_loss = 0.0
        if len(reg_rows):
            reg_loss, d_t = smooth_l1_loss(out[reg_rows, 1:], reg_targets)
            d_out[reg_rows, 1:] = self.reg_weight * d_t
        total = cls_loss + self.reg_weight * reg_loss
        check_finite(np.array([total]), "proposal training loss")
        grads, dx = mlp.backward(cache, d_out)
        d_table = np.zeros_like(table)
        np.add.at(d_table, cats, dx[:, inputs.shape[1]:])
        grads["embedding.weights"] = d_table
        adam_step(state, self.params_, grads)
        return {"total": total, "cls": cls_loss, "reg": reg_loss}

    # inference ------------------------------------------------------------

    def decision_function(self, group):
        """Raw ``(logits, offsets)`` for every candidate of one group."""
        check_is_fitted(self, "params_")
        x = check_array(group.inputs, ndim=2, last_dim=self.n_features_in_, name="inputs")
        phrase = self.params_["embedding.weights"][group.category]
        out, _ = self._mlp().forward(np.concatenate([x, np.broadcast_to(phrase, (len(x), len(phrase)))], axis=1))
        return out[:, 0], out[:, 1:]

    def predict_proba(self, X):
        return [sigmoid(self.decision_function(g)[0]) for g in X]

    def rank_and_select(self, group, k=None, nms_threshold=None):
        """Top-``k`` NMS survivors by confidence, each with its refined box.

        NMS runs on the raw boxes; ties in confidence go to the lower index.
        Fewer than ``k`` survivors yields a shorter list.
        """
        k = self.top_k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        thr = self.nms_threshold if nms_threshold is None else nms_threshold
        logits, offsets = self.decision_function(group)
        conf = sigmoid(logits)
        keep = nms(group.boxes, conf, thr)[:k]
        refined = decode_offsets(group.boxes[keep], offsets[keep], image_size=group.image_size)
        return [
            ScoredProposal(int(i), float(conf[i]), offsets[i].copy(), Box.from_array(group.boxes[i]),
                           Box.from_array(r))
            for i, r in zip(keep, refined)
        ]

    def predict(self, X):
        return [self.rank_and_select(g) for g in X]


class TopKSelector:
    """Memoized top-K selections and region features over a dataset.

    Selections depend only on (scene, role, category), so every query that
    shares them reuses one scoring pass.
    """

    def __init__(self, dataset, m_sub, m_obj, nms_threshold=0.5):
        self.dataset = dataset
        self.models = {"subject": m_sub, "object": m_obj}
        self.nms_threshold = nms_threshold
        self._cache = {}
        self._feature_cache = {}
        self._featurizer = (None, None)

    def select(self, scene_id, role, category, k):
        key = (scene_id, role, int(category), k)
        if key not in self._cache:
            group = ProposalGroup.from_proposals(self.dataset.proposals[scene_id], category)
            self._cache[key] = self.models[role].rank_and_select(group, k, self.nms_threshold)
        return self._cache[key]

    def selection_features(self, scene_id, role, category, k):
        """``(maps, vectors, selection)`` for the refined boxes of one selection."""
        key = (scene_id, role, int(category), k)
        if key not in self._feature_cache:
            sel = self.select(scene_id, role, category, k)
            maps, vecs = self.features(scene_id, [s.refined_box for s in sel])
            self._feature_cache[key] = (maps, vecs, sel)
        return self._feature_cache[key]

    def clear_features(self):
        self._feature_cache.clear()

    def features(self, scene_id, boxes):
        """Feature maps ``(n, H, W, D)`` and pooled vectors for boxes of one scene."""
        from .scene_synth import RegionFeaturizer

        sid, feat = self._featurizer
        if sid != scene_id:
            feat = RegionFeaturizer(self.dataset.scenes[scene_id], grid=self.dataset.spec.grid_size)
            self._featurizer = (scene_id, feat)
        return feat(boxes)
