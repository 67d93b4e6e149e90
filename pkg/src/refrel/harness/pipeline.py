"""Stage commands behind the CLI. Every artifact lives under ``config.out``.

Layout of a run directory::

    dataset/                      see :mod:`refrel.harness.dataset_io`
    checkpoints/m_sub.{bin,json}  subject proposal model
    checkpoints/m_obj.{bin,json}  object proposal model
    checkpoints/m_pred.{bin,json} predicate model
    pairs/train_topk.{jsonl,bin}  balanced predicate training pairs
    predictions_<mode>.jsonl      ranked boxes per role for every test query
    metrics_<mode>.json           metrics report of one mode
    ablation.json / ablation.txt  predicate-input and proposal-source ablations
    visualize/                    pixmaps of sample predictions
    run_record.json               config, seeds, loss curves, metrics, timings
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..errors import PrerequisiteError
from ..inference import MODES, infer_cached, predict_top_boxes, role_training_set
from ..metrics import SCHEMA_VERSION, role_report
from ..neural.checkpoint import checkpoint_exists, load_params, save_params
from ..predicate import (
    POSITIVE,
    VECTOR_MODES,
    PredicateClassifier,
    VectorPredicateClassifier,
    build_training_pairs,
    gt_pair_samples,
    predicate_recall,
    samples_to_arrays,
    samples_to_vectors,
)
from ..proposal import CategoryProposalModel, TopKSelector
from ..scene_synth import generate_dataset
from .config import RunRecord, write_json_atomic
from .dataset_io import read_dataset, write_dataset
from .pair_cache import load_pair_samples, pair_cache_exists, save_pair_samples

log = logging.getLogger("refrel")

ABLATION_RANKS = (1, 5)


# paths ------------------------------------------------------------------------


def dataset_dir(config):
    return config.out_dir / "dataset"


def checkpoint_stem(config, name):
    return config.out_dir / "checkpoints" / name


def pair_cache_stem(config):
    return config.out_dir / "pairs" / "train_topk"


def record_path(config):
    return config.out_dir / "run_record.json"


def _update_record(config, **sections):
    rec = RunRecord.load_or_start(record_path(config), config)
    for name, values in sections.items():
        getattr(rec, name).update(values)
    rec.save(record_path(config))
    return rec


# estimator checkpoints --------------------------------------------------------


def save_estimator(stem, est):
    """Checkpoint a fitted estimator; tensor names are prefixed with the file stem (``m_sub.``...)."""
    prefix = Path(stem).name + "."
    meta = {
        "class": type(est).__name__,
        "estimator_params": est.get_params(),
        "n_features_in": int(est.n_features_in_),
        "prefix": prefix,
    }
    save_params(stem, {prefix + k: v for k, v in est.params_.items()}, meta)


_ESTIMATORS = {
    "CategoryProposalModel": CategoryProposalModel,
    "PredicateClassifier": PredicateClassifier,
    "VectorPredicateClassifier": VectorPredicateClassifier,
}


def load_estimator(stem):
    params, meta = load_params(stem)
    est = _ESTIMATORS[meta["class"]](**meta["estimator_params"])
    prefix = meta.get("prefix", "")
    est.params_ = {k[len(prefix):]: v for k, v in params.items()}
    est.n_features_in_ = meta["n_features_in"]
    return est


def _require(config, names, stage):
    missing = [n for n in names if not checkpoint_exists(checkpoint_stem(config, n))]
    if missing:
        raise PrerequisiteError(stage, f"missing checkpoints {', '.join(missing)} under {config.out_dir / 'checkpoints'}")


def _load_dataset(config):
    d = dataset_dir(config)
    if not (d / "spec.json").exists():
        raise PrerequisiteError("gen", f"no dataset under {d}")
    return read_dataset(d)


def _models(config, seeds):
    p, q = config.proposal, config.predicate
    n_cat = config.dataset_spec.num_object_categories
    m_sub = CategoryProposalModel(n_categories=n_cat, random_state=seeds["subject"], **p)
    m_obj = CategoryProposalModel(n_categories=n_cat, random_state=seeds["object"], **p)
    m_pred = PredicateClassifier(n_predicates=config.dataset_spec.num_predicates,
                                 random_state=seeds["predicate"], **q)
    return m_sub, m_obj, m_pred


def _pair_k(config):
    inf = config.inference_config
    return max(inf.k_sub, inf.k_obj)


# commands ---------------------------------------------------------------------


def cmd_gen(config):
    """Generate and write the dataset; returns its statistics."""
    t0 = time.perf_counter()
    ds = generate_dataset(config.dataset_spec, config.num_train, config.num_test)
    write_dataset(ds, dataset_dir(config))
    stats = ds.stats()
    _update_record(config, timings={"gen": time.perf_counter() - t0}, metrics={"dataset": stats})
    log.info("dataset written to %s", dataset_dir(config))
    return stats


def cmd_train(config, stage):
    if stage == "proposals":
        return _train_proposals(config)
    if stage == "predicate":
        return _train_predicate(config)
    raise ValueError(f"unknown stage {stage!r}; expected 'proposals' or 'predicate'")


def _train_proposals(config):
    t0 = time.perf_counter()
    ds = _load_dataset(config)
    seeds = config.component_seeds()
    m_sub, m_obj, _ = _models(config, seeds)
    queries = ds.train_queries
    curves = {}
    # cached pairs were selected by the previous proposal models
    for suffix in (".bin", ".jsonl"):
        pair_cache_stem(config).with_suffix(suffix).unlink(missing_ok=True)
    for name, est, role in (("m_sub", m_sub, "subject"), ("m_obj", m_obj, "object")):
        log.info("training %s on %d queries", name, len(queries))
        est.fit(*role_training_set(ds, queries, role))
        save_estimator(checkpoint_stem(config, name), est)
        curves[name] = est.loss_curve_
    _update_record(config, loss_curves=curves, timings={"train_proposals": time.perf_counter() - t0})
    return curves


def _selector(config, ds):
    _require(config, ["m_sub", "m_obj"], "proposals")
    m_sub = load_estimator(checkpoint_stem(config, "m_sub"))
    m_obj = load_estimator(checkpoint_stem(config, "m_obj"))
    nms_thr = config.proposal.get("nms_threshold", 0.5)
    return TopKSelector(ds, m_sub, m_obj, nms_threshold=nms_thr), m_sub, m_obj


def _train_predicate(config):
    _require(config, ["m_sub", "m_obj"], "proposals")
    t0 = time.perf_counter()
    ds = _load_dataset(config)
    seeds = config.component_seeds()
    selector, _, _ = _selector(config, ds)
    samples = build_training_pairs(ds, ds.train_queries, selector, ds.spec.num_predicates,
                                   k=_pair_k(config), rng_seed=seeds["pairs"])
    counts = _provenance_counts(samples)
    log.info("predicate training pairs: %s", counts)
    save_pair_samples(pair_cache_stem(config), samples)
    X, Y = samples_to_arrays(samples)
    del samples
    selector.clear_features()
    _, _, m_pred = _models(config, seeds)
    m_pred.fit(X, Y)
    save_estimator(checkpoint_stem(config, "m_pred"), m_pred)
    _update_record(config, loss_curves={"m_pred": m_pred.loss_curve_},
                   metrics={"predicate_pairs": counts},
                   timings={"train_predicate": time.perf_counter() - t0})
    return m_pred.loss_curve_


def _provenance_counts(samples):
    out = {}
    for s in samples:
        out[s.provenance] = out.get(s.provenance, 0) + 1
    return dict(sorted(out.items()))


def evaluate(config, ds, selector, m_pred, mode):
    """``(report, prediction records)`` for the test split under ``mode``."""
    cfg = config.inference_for(mode)
    mcfg = config.metrics_config
    depth = max(mcfg.recall_ranks)
    preds = {"subject": [], "object": []}
    gts = {"subject": [], "object": []}
    records = []
    top_p = []
    for q in ds.test_queries:
        ranked = infer_cached(q, selector, m_pred, cfg)
        subs, objs = predict_top_boxes(ranked, depth)
        preds["subject"].append(subs)
        preds["object"].append(objs)
        gts["subject"].append(q.gt_subject_boxes)
        gts["object"].append(q.gt_object_boxes)
        records.append(_prediction_record(q, mode, ranked, depth))
        if mode != "cp":
            top_p.append(ranked[0].predicate_confidence)
    dims = (ds.spec.image_width, ds.spec.image_height)
    report = {"schema_version": SCHEMA_VERSION, "mode": mode}
    for role in ("subject", "object"):
        report[role] = role_report(preds[role], gts[role], dims, mcfg)
    if mode != "cp":
        report["predicate"] = {"mean_top1_confidence": float(np.mean(top_p)) if top_p else 0.0}
    return report, records


def _prediction_record(q, mode, ranked, depth):
    rec = {"query_id": q.query_id, "scene_id": q.scene_id, "mode": mode,
           "triple": [q.subject_category, q.predicate_id, q.object_category]}
    for role in ("subject", "object"):
        seen, boxes = set(), []
        for r in ranked:
            cand = r.subject if role == "subject" else r.object
            if cand.proposal_index in seen:
                continue
            seen.add(cand.proposal_index)
            entry = {"box": list(cand.refined_box), "score": r.combined_score, "confidence": cand.confidence}
            if mode != "cp":
                entry["predicate_score"] = r.predicate_confidence
            boxes.append(entry)
            if len(boxes) == depth:
                break
        rec[role] = boxes
    return rec


def cmd_eval(config, mode):
    """Write ``predictions_<mode>.jsonl`` and ``metrics_<mode>.json``; returns the report."""
    modes = MODES if mode == "all" else (mode,)
    for m in modes:
        if m not in MODES:
            raise ValueError(f"mode must be one of {MODES} or 'all', got {m!r}")
    _require(config, ["m_sub", "m_obj", "m_pred"], "predicate")
    ds = _load_dataset(config)
    selector, _, _ = _selector(config, ds)
    m_pred = load_estimator(checkpoint_stem(config, "m_pred"))
    reports = {}
    for m in modes:
        t0 = time.perf_counter()
        report, records = evaluate(config, ds, selector, m_pred, m)
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        path = config.out_dir / f"predictions_{m}.jsonl"
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(lines)
        tmp.replace(path)
        write_json_atomic(config.out_dir / f"metrics_{m}.json", report)
        _update_record(config, metrics={f"eval_{m}": report}, timings={f"eval_{m}": time.perf_counter() - t0})
        reports[m] = report
    return reports if mode == "all" else reports[mode]


def cmd_ablate(config):
    """Train predicate variants on one shared budget and tabulate r@1/r@5 on the test split.

    Rows: ``gt_proposals`` and ``topk_proposals`` (map input, trained and
    evaluated on ground-truth-box pairs vs top-K proposal pairs), then
    ``map`` and the vector variants, all on top-K pairs.
    """
    _require(config, ["m_sub", "m_obj"], "proposals")
    t0 = time.perf_counter()
    ds = _load_dataset(config)
    seeds = config.component_seeds()
    selector, m_sub, m_obj = _selector(config, ds)
    P = ds.spec.num_predicates
    k = _pair_k(config)
    size = (ds.spec.image_width, ds.spec.image_height)
    seed = seeds["ablation"]

    if pair_cache_exists(pair_cache_stem(config)):
        train_topk = load_pair_samples(pair_cache_stem(config))
    else:
        train_topk = build_training_pairs(ds, ds.train_queries, selector, P, k=k, rng_seed=seeds["pairs"])
    test_topk = [s for s in build_training_pairs(ds, ds.test_queries, selector, P, k=k, balance=False)
                 if s.provenance == POSITIVE]
    train_gt = gt_pair_samples(ds, ds.train_ids, selector, P, rng_seed=seeds["pairs"])
    test_gt = [s for s in gt_pair_samples(ds, ds.test_ids, selector, P, balance=False)
               if s.provenance == POSITIVE]

    def recalls(probs, Y):
        return {f"r@{r}": predicate_recall(probs, Y, r, P) for r in ABLATION_RANKS}

    rows = []

    def add(table, variant, train, test, fit_eval):
        scores = fit_eval()
        rows.append({"table": table, "variant": variant, "train_pairs": len(train), "eval_pairs": len(test),
                     **scores})
        log.info("ablation %s/%s: %s", table, variant, scores)

    def map_variant(train, test):
        X, Y = samples_to_arrays(train)
        est = PredicateClassifier(n_predicates=P, random_state=seed, **config.predicate).fit(X, Y)
        del X, Y
        Xt, Yt = samples_to_arrays(test)
        return recalls(est.predict_proba(Xt), Yt)

    gt_scores = map_variant(train_gt, test_gt)
    topk_scores = map_variant(train_topk, test_topk)
    add("proposal_source", "gt_proposals", train_gt, test_gt, lambda: gt_scores)
    add("proposal_source", "topk_proposals", train_topk, test_topk, lambda: topk_scores)
    add("feature_input", "map", train_topk, test_topk, lambda: topk_scores)
    vec_cfg = {**config.vector_predicate}
    for mode in VECTOR_MODES:
        def fit_vec(mode=mode):
            X, Y = samples_to_vectors(train_topk, mode, m_sub.phrase_vector, m_obj.phrase_vector, size)
            est = VectorPredicateClassifier(
                mode=mode, n_predicates=P, random_state=seed,
                max_iter=config.predicate["max_iter"], batch_size=config.predicate["batch_size"],
                learning_rate=config.predicate["learning_rate"], **vec_cfg,
            ).fit(X, Y)
            Xt, Yt = samples_to_vectors(test_topk, mode, m_sub.phrase_vector, m_obj.phrase_vector, size)
            return recalls(est.predict_proba(Xt), Yt)
        add("feature_input", mode, train_topk, test_topk, fit_vec)

    table = {"schema_version": SCHEMA_VERSION, "ranks": list(ABLATION_RANKS), "rows": rows}
    write_json_atomic(config.out_dir / "ablation.json", table)
    (config.out_dir / "ablation.txt").write_text(format_ablation(table))
    _update_record(config, metrics={"ablation": table}, timings={"ablate": time.perf_counter() - t0})
    return table


def format_ablation(table):
    ranks = [f"r@{r}" for r in table["ranks"]]
    head = ["table", "variant", "train_pairs", "eval_pairs"] + ranks
    body = [[r["table"], r["variant"], str(r["train_pairs"]), str(r["eval_pairs"])]
            + [f"{r[k]:.4f}" for k in ranks] for r in table["rows"]]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*head), fmt.format(*("-" * w for w in widths))]
                     + [fmt.format(*b) for b in body]) + "\n"


def cmd_run(config):
    """gen, both training stages and evaluation in every mode."""
    t0 = time.perf_counter()
    cmd_gen(config)
    cmd_train(config, "proposals")
    cmd_train(config, "predicate")
    reports = cmd_eval(config, "all")
    _update_record(config, timings={"run_total": time.perf_counter() - t0})
    return reports
