"""Combine category confidences with predicate confidences to rank subject/object pairs.

A pair's score is ``c_s * c_o * p`` when the queried predicate's confidence
``p`` reaches ``tau_pred``; below it the predicate term is dropped and the
score is ``c_s * c_o``. Modes ``cp`` and ``pa`` rank by the category scores
alone or by ``p`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ShapeMismatchError
from .predicate import stack_pair
from .proposal import ProposalGroup, ScoredProposal
from .validation import check_positive_int, check_probability

MODES = ("full", "cp", "pa")


@dataclass(frozen=True)
class InferenceConfig:
    k_sub: int = 5
    k_obj: int = 5
    tau_pred: float = 0.5
    mode: str = "full"
    # exponent on p inside the product; 1.0 is the plain probability product
    predicate_weight: float = 1.0

    def __post_init__(self):
        check_positive_int(self.k_sub, "k_sub")
        check_positive_int(self.k_obj, "k_obj")
        check_probability(self.tau_pred, "tau_pred")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class PairPrediction:
    subject: ScoredProposal
    object: ScoredProposal
    predicate_confidence: Optional[float]
    combined_score: float
    subject_rank: int = 0
    object_rank: int = 0


def combined_score(c_s, c_o, p, tau_pred=0.5, weight=1.0):
    """``c_s * c_o * p**weight`` if ``p >= tau_pred`` else ``c_s * c_o``."""
    c_s = check_probability(c_s, "c_s")
    c_o = check_probability(c_o, "c_o")
    p = check_probability(p, "p")
    tau_pred = check_probability(tau_pred, "tau_pred")
    if p >= tau_pred:
        return c_s * c_o * (p if weight == 1.0 else p ** weight)
    return c_s * c_o


def rank_pairs(subjects, objects, predicate_conf, config):
    """Score and sort every subject/object pair for ``config.mode``.

    ``predicate_conf[i, j]`` is the queried predicate's confidence for
    ``(subjects[i], objects[j])``; it may be ``None`` in ``cp`` mode. Ties are
    broken by (subject rank, object rank).
    """
    if not subjects or not objects:
        raise ValueError("inference needs at least one subject and one object candidate")
    if predicate_conf is None:
        if config.mode != "cp":
            raise ValueError(f"mode {config.mode!r} needs predicate confidences")
    else:
        predicate_conf = np.asarray(predicate_conf, dtype=np.float64)
        if predicate_conf.shape != (len(subjects), len(objects)):
            raise ShapeMismatchError(
                f"predicate table {predicate_conf.shape} does not match {len(subjects)}x{len(objects)} pairs"
            )
    out = []
    for i, s in enumerate(subjects):
        for j, o in enumerate(objects):
            if config.mode == "cp":
                p = None
                score = s.confidence * o.confidence
            else:
                p = float(predicate_conf[i, j])
                if config.mode == "full":
                    score = combined_score(s.confidence, o.confidence, p, config.tau_pred, config.predicate_weight)
                else:
                    score = p
            out.append(PairPrediction(s, o, p, float(score), i, j))
    out.sort(key=lambda r: (-r.combined_score, r.subject_rank, r.object_rank))
    return out


def infer(query, proposals, m_sub, m_obj, m_pred, config, featurize=None):
    """Ranked pair predictions for one query.

    ``proposals`` is the scene's :class:`~refrel.scene_synth.ProposalSet`.
    Region maps of the refined boxes come from ``featurize(boxes)`` (default:
    the proposal set's own featurizer).
    """
    subs = m_sub.rank_and_select(ProposalGroup.from_proposals(proposals, query.subject_category), config.k_sub)
    objs = m_obj.rank_and_select(ProposalGroup.from_proposals(proposals, query.object_category), config.k_obj)
    if not subs or not objs:
        raise ValueError(f"empty candidate selection for query {query.query_id}")
    pconf = None
    if config.mode != "cp":
        featurize = featurize or proposals.featurizer
        pconf = pair_predicate_table(m_pred, featurize, subs, objs, query.predicate_id)
    return rank_pairs(subs, objs, pconf, config)


def pair_predicate_table(m_pred, featurize, subs, objs, predicate_id):
    """Queried-predicate confidence for every (subject, object) candidate pair."""
    maps, _ = featurize([s.refined_box for s in subs] + [o.refined_box for o in objs])
    return predicate_table_from_maps(m_pred, maps[: len(subs)], maps[len(subs):], predicate_id)


def predicate_table_from_maps(m_pred, subject_maps, object_maps, predicate_id):
    tensors = np.stack([stack_pair(a, b) for a in subject_maps for b in object_maps])
    probs = m_pred.predict_proba(tensors)[:, predicate_id]
    return probs.reshape(len(subject_maps), len(object_maps))


def predict_top_boxes(ranked, k):
    """First ``k`` distinct subject and object boxes in rank order.

    Candidates are deduplicated by proposal index so each role can be
    evaluated on its own.
    """
    subs, objs = [], []
    seen_s, seen_o = set(), set()
    for r in ranked:
        if r.subject.proposal_index not in seen_s and len(subs) < k:
            seen_s.add(r.subject.proposal_index)
            subs.append(r.subject.refined_box)
        if r.object.proposal_index not in seen_o and len(objs) < k:
            seen_o.add(r.object.proposal_index)
            objs.append(r.object.refined_box)
    return subs, objs


class RelationshipGrounder(BaseEstimator):
    """Both stages behind one estimator: ``fit(dataset)`` then ``predict(queries)``.

    The three component estimators are hyperparameters, so ``get_params`` /
    ``set_params`` / ``clone`` reach into them with the usual ``__`` syntax.
    """

    def __init__(self, subject_model=None, object_model=None, predicate_model=None,
                 k_sub=5, k_obj=5, tau_pred=0.5, mode="full", pair_seed=0):
        self.subject_model = subject_model
        self.object_model = object_model
        self.predicate_model = predicate_model
        self.k_sub = k_sub
        self.k_obj = k_obj
        self.tau_pred = tau_pred
        self.mode = mode
        self.pair_seed = pair_seed

    @property
    def config_(self):
        return InferenceConfig(self.k_sub, self.k_obj, self.tau_pred, self.mode)

    def fit(self, dataset, queries=None):
        from sklearn.base import clone

        from .predicate import build_training_pairs, samples_to_arrays
        from .proposal import CategoryProposalModel, TopKSelector
        from .predicate import PredicateClassifier

        queries = dataset.train_queries if queries is None else queries
        p = dataset.spec.num_predicates
        self.m_sub_ = clone(self.subject_model or CategoryProposalModel(n_categories=dataset.spec.num_object_categories))
        self.m_obj_ = clone(self.object_model or CategoryProposalModel(n_categories=dataset.spec.num_object_categories))
        self.m_sub_.fit(*role_training_set(dataset, queries, "subject"))
        self.m_obj_.fit(*role_training_set(dataset, queries, "object"))
        self.selector_ = TopKSelector(dataset, self.m_sub_, self.m_obj_)
        k = max(self.k_sub, self.k_obj)
        samples = build_training_pairs(dataset, queries, self.selector_, p, k=k, rng_seed=self.pair_seed)
        self.m_pred_ = clone(self.predicate_model or PredicateClassifier(n_predicates=p))
        self.m_pred_.fit(*samples_to_arrays(samples))
        self.dataset_ = dataset
        return self

    def predict(self, queries):
        """Ranked :class:`PairPrediction` lists, one per query."""
        return [infer_cached(q, self.selector_, self.m_pred_, self.config_) for q in queries]


def infer_cached(query, selector, m_pred, config):
    """:func:`infer` using a :class:`~refrel.proposal.TopKSelector` for selections and features."""
    subs = selector.select(query.scene_id, "subject", query.subject_category, config.k_sub)
    objs = selector.select(query.scene_id, "object", query.object_category, config.k_obj)
    if not subs or not objs:
        raise ValueError(f"empty candidate selection for query {query.query_id}")
    pconf = None
    if config.mode != "cp":
        sm = selector.selection_features(query.scene_id, "subject", query.subject_category, config.k_sub)[0]
        om = selector.selection_features(query.scene_id, "object", query.object_category, config.k_obj)[0]
        pconf = predicate_table_from_maps(m_pred, sm, om, query.predicate_id)
    return rank_pairs(subs, objs, pconf, config)


def role_training_set(dataset, queries, role):
    """``(groups, gt_boxes)`` for training the subject or the object model."""
    X, y = [], []
    for q in queries:
        cat = q.subject_category if role == "subject" else q.object_category
        X.append(ProposalGroup.from_proposals(dataset.proposals[q.scene_id], cat))
        y.append(q.gt_subject_boxes if role == "subject" else q.gt_object_boxes)
    return X, y
