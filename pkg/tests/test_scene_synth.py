import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import relation_rules
from refrel.boxes import Box, pairwise_iou, spatial_feature_of
from refrel.errors import GenerationError, InvalidRegionError
from refrel.scene_synth import (
    PREDICATE_NAMES,
    DatasetSpec,
    EmbeddingTable,
    Entity,
    Scene,
    ambiguity_rate,
    category_appearance,
    compute_relations,
    derive_queries,
    embed_phrase,
    featurize_region,
    generate_dataset,
    generate_proposals,
    generate_scene,
    render,
    split_scene_ids,
)

SPEC = DatasetSpec()


def _scene(boxes, cats, spec=SPEC):
    ents = []
    for c, b in zip(cats, boxes):
        color, kind = category_appearance(c)
        ents.append(Entity(c, Box(*b), tuple(v / 255 for v in color), kind))
    raster = render(ents, spec.image_width, spec.image_height).astype(float) / 255
    return Scene(0, tuple(ents), compute_relations([e.box for e in ents], spec), raster)


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(num_predicates=0)
    with pytest.raises(ValueError):
        DatasetSpec(proposal_count=2)
    with pytest.raises(ValueError):
        DatasetSpec(image_width=0)
    assert DatasetSpec().predicate_names == ("left_of", "above", "inside", "near", "larger_than")


def test_left_of_example():
    s = _scene([(10, 10, 30, 30), (50, 10, 70, 30)], [0, 1])
    left = PREDICATE_NAMES.index("left_of")
    assert (0, left, 1) in s.relations and (1, left, 0) not in s.relations


def test_single_entity_scene_has_no_relations():
    spec = DatasetSpec(entities_per_scene_min=1, entities_per_scene_max=1)
    s = generate_scene(spec, 3)
    assert len(s.entities) == 1 and s.relations == ()
    assert derive_queries(s) == []


@given(st.integers(0, 10_000), st.integers(1, 10))
def test_relations_are_exhaustive(seed, n_pred):
    spec = DatasetSpec(seed=seed % 7, num_predicates=n_pred)
    s = generate_scene(spec, seed)
    expected = set()
    for i, a in enumerate(s.entities):
        for j, b in enumerate(s.entities):
            if i == j:
                continue
            rules = relation_rules(list(a.box), list(b.box), spec.image_width, spec.image_height)
            for p, name in enumerate(spec.predicate_names):
                if rules[name]:
                    expected.add((i, p, j))
    assert set(s.relations) == expected
    assert all(p < n_pred for _, p, _ in s.relations)


@given(st.integers(0, 10_000))
def test_scene_invariants(seed):
    s = generate_scene(SPEC, seed)
    boxes = np.array([list(e.box) for e in s.entities])
    iou = pairwise_iou(boxes, boxes)
    np.fill_diagonal(iou, 0)
    assert np.all(iou < SPEC.max_entity_iou)
    assert SPEC.entities_per_scene_min <= len(s.entities) <= SPEC.entities_per_scene_max
    assert all(0 <= e.category_id < SPEC.num_object_categories for e in s.entities)
    assert s.raster.shape == (64, 64, 3) and s.raster.min() >= 0 and s.raster.max() <= 1


def test_generation_is_deterministic():
    a, b = generate_scene(SPEC, 42), generate_scene(SPEC, 42)
    assert a == b and a.raster.tobytes() == b.raster.tobytes()
    assert generate_scene(SPEC, 43) != a


def test_generation_failure_raises():
    # four 40px entities with no overlap cannot fit in 64x64
    spec = DatasetSpec(entities_per_scene_min=4, entities_per_scene_max=4, min_entity_side=36,
                       max_entity_side=36, max_entity_iou=0.0)
    with pytest.raises(GenerationError):
        generate_scene(spec, 0)


def test_contained_entity_stays_visible():
    s = _scene([(20, 20, 30, 30), (10, 10, 46, 46)], [0, 1])
    np.testing.assert_allclose(s.raster[25, 25], np.array(category_appearance(0)[0]) / 255)
    inside = PREDICATE_NAMES.index("inside")
    assert (0, inside, 1) in s.relations


def test_derive_queries_examples():
    # one relation only: two entities far apart horizontally and vertically aligned
    spec = DatasetSpec(num_predicates=1)
    s = _scene([(0, 0, 20, 20), (40, 0, 60, 20)], [3, 5], spec)
    qs = derive_queries(s)
    assert len(qs) == 1
    q = qs[0]
    assert (q.subject_category, q.predicate_id, q.object_category) == (3, 0, 5)
    assert len(q.gt_subject_boxes) == 1 and len(q.gt_object_boxes) == 1

    # two same-category subjects left of the same object -> one query, two subject boxes
    s = _scene([(0, 0, 20, 20), (0, 40, 20, 60), (40, 20, 60, 40)], [3, 3, 5], spec)
    qs = [q for q in derive_queries(s) if q.triple == (3, 0, 5)]
    assert len(qs) == 1 and len(qs[0].gt_subject_boxes) == 2 and qs[0].pairs == ((0, 2), (1, 2))


@given(st.integers(0, 5_000))
def test_query_invariants(seed):
    s = generate_scene(SPEC, seed)
    rels = set(s.relations)
    for q in derive_queries(s):
        assert q.gt_subject_boxes and q.gt_object_boxes
        for si, oi in q.pairs:
            assert (si, q.predicate_id, oi) in rels
            assert s.entities[si].category_id == q.subject_category
            assert s.entities[oi].category_id == q.object_category


def test_proposal_examples():
    s = generate_scene(SPEC, 5)
    props = generate_proposals(s, SPEC, 5)
    assert len(props) == 300
    exact = generate_proposals(s, DatasetSpec(jitter_fraction=0.0), 5)
    for e in s.entities:
        assert np.any(np.all(exact.boxes == np.array(list(e.box)), axis=1))


def test_jitter_bounds_example():
    ent = Entity(0, Box(10, 10, 30, 30), (1.0, 0, 0), "rectangle")
    scene = Scene(0, (ent,), (), render([ent], 64, 64).astype(float) / 255)
    spec = DatasetSpec(entities_per_scene_min=1, entities_per_scene_max=1, jitter_copies=5)
    props = generate_proposals(scene, spec, 0)
    near = props.boxes[pairwise_iou(props.boxes, np.array([[10, 10, 30, 30.0]]))[:, 0] > 0.5]
    jittered = [b for b in near if np.all(b >= [8, 8, 28, 28]) and np.all(b <= [12, 12, 32, 32])]
    assert len(jittered) >= 5


@given(st.integers(0, 3_000))
def test_proposal_coverage_and_spatial_features(seed):
    s = generate_scene(SPEC, seed)
    props = generate_proposals(s, SPEC, seed)
    ent = np.array([list(e.box) for e in s.entities])
    assert np.all(pairwise_iou(props.boxes, ent).max(axis=0) > 0.5)
    i = seed % len(props)
    np.testing.assert_array_equal(props[i].spatial_feature, spatial_feature_of(props.boxes[i], 64, 64))
    assert np.isfinite(props[i].feature_map).all()


def test_proposals_deterministic():
    s = generate_scene(SPEC, 9)
    a, b = generate_proposals(s, SPEC, 9), generate_proposals(s, SPEC, 9)
    assert a.boxes.tobytes() == b.boxes.tobytes()
    assert a.feature_vectors.tobytes() == b.feature_vectors.tobytes()


def test_featurize_uniform_red_region():
    ent = Entity(0, Box(8, 8, 56, 56), (1.0, 0.0, 0.0), "rectangle")
    scene = Scene(0, (ent,), (), render([ent], 64, 64).astype(float) / 255)
    fmap, vec = featurize_region(scene, Box(16, 16, 48, 48), 7, 7)
    assert fmap.shape == (7, 7, SPEC.feature_dim)
    np.testing.assert_array_equal(fmap[..., :3], np.broadcast_to([1.0, 0.0, 0.0], (7, 7, 3)))
    assert vec[0] == 1.0
    fmap2, vec2 = featurize_region(scene, Box(16, 16, 48, 48), 7, 7)
    assert fmap.tobytes() == fmap2.tobytes() and vec.tobytes() == vec2.tobytes()
    np.testing.assert_allclose(vec, fmap.mean(axis=(0, 1)))


def test_featurize_rejects_zero_area():
    s = generate_scene(SPEC, 1)
    with pytest.raises(InvalidRegionError):
        featurize_region(s, np.array([70.0, 10, 80, 20]))


def test_embedding_table():
    t = EmbeddingTable.init(6, 32, rng=0)
    np.testing.assert_array_equal(embed_phrase(2, t), embed_phrase(2, t))
    assert not np.array_equal(embed_phrase(1, t), embed_phrase(2, t))
    assert EmbeddingTable.init(6, 300, rng=0).weights.shape == (6, 300)
    with pytest.raises(IndexError):
        embed_phrase(6, t)


def test_dataset_split_and_stats():
    ds = generate_dataset(DatasetSpec(), 20, 5)
    assert len(ds.train_ids) == 20 and len(ds.test_ids) == 5
    assert not set(ds.train_ids) & set(ds.test_ids)
    assert split_scene_ids(range(25), 5) == (ds.train_ids, ds.test_ids)
    stats = ds.stats()
    assert 0.0 <= stats["ambiguity_rate"] <= 1.0
    assert stats["query_count"] == len(ds.queries)
    assert ambiguity_rate(ds.scenes, []) == 0.0
