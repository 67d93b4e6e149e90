"""Shapes-world scenes with rule-defined relations, proposals and region features.

Everything here is a pure function of ``(DatasetSpec, seeds)``. Scenes carry
exhaustive ground truth: the relation list is exactly what the geometric
predicate rules produce over the entity boxes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Optional

import numpy as np

from .boxes import Box, as_boxes, clip_boxes, pairwise_iou, spatial_features
from .errors import GenerationError, InvalidRegionError

SHAPE_KINDS = ("rectangle", "ellipse", "triangle")

PALETTE = (
    (255, 0, 0),
    (0, 255, 0),
    (0, 0, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
)
BACKGROUND = (40, 40, 40)

FEATURE_CHANNELS = ("red", "green", "blue", "x", "y", "edge", "mask", "luma")

# the first ``num_predicates`` names form the active vocabulary
PREDICATE_NAMES = (
    "left_of",
    "above",
    "inside",
    "near",
    "larger_than",
    "overlaps",
    "right_of",
    "below",
    "smaller_than",
    "far_from",
)

# center offset (px) required by the directional predicates
DIRECTION_MARGIN = 10.0
NEAR_FRACTION = 0.25
FAR_FRACTION = 0.5
SIZE_RATIO = 1.5


@dataclass(frozen=True)
class DatasetSpec:
    image_width: int = 64
    image_height: int = 64
    num_object_categories: int = 6
    num_predicates: int = 5
    entities_per_scene_min: int = 2
    entities_per_scene_max: int = 4
    proposal_count: int = 300
    jitter_fraction: float = 0.1
    seed: int = 0
    min_entity_side: int = 20
    max_entity_side: int = 36
    max_entity_iou: float = 0.7
    jitter_copies: int = 2
    grid_size: int = 7
    embed_dim: int = 32

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if not 1 <= self.num_predicates <= len(PREDICATE_NAMES):
            raise ValueError(f"num_predicates must be in [1, {len(PREDICATE_NAMES)}]")
        if not 1 <= self.num_object_categories <= len(PALETTE) * len(SHAPE_KINDS):
            raise ValueError(f"num_object_categories must be in [1, {len(PALETTE) * len(SHAPE_KINDS)}]")
        if not 1 <= self.entities_per_scene_min <= self.entities_per_scene_max:
            raise ValueError("need 1 <= entities_per_scene_min <= entities_per_scene_max")
        if self.proposal_count < self.entities_per_scene_max * self.jitter_copies:
            raise ValueError("proposal_count must cover a jittered copy of every entity")
        if not 0.0 <= self.jitter_fraction <= 1.0:
            raise ValueError("jitter_fraction must lie in [0, 1]")
        if not 1 <= self.min_entity_side <= self.max_entity_side <= min(self.image_width, self.image_height):
            raise ValueError("entity side bounds must fit in the image")

    @property
    def predicate_names(self):
        return PREDICATE_NAMES[: self.num_predicates]

    @property
    def feature_dim(self):
        return len(FEATURE_CHANNELS)


@dataclass(frozen=True)
class Entity:
    category_id: int
    box: Box
    color: tuple
    shape_kind: str


@dataclass(frozen=True, eq=False)
class Scene:
    id: int
    entities: tuple
    relations: tuple  # (subject_entity_idx, predicate_id, object_entity_idx)
    raster: np.ndarray  # (H, W, 3) in [0, 1], values k/255

    @property
    def image_size(self):
        return self.raster.shape[1], self.raster.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, Scene)
            and self.id == other.id
            and self.entities == other.entities
            and self.relations == other.relations
            and np.array_equal(self.raster, other.raster)
        )


@dataclass(frozen=True)
class Query:
    query_id: int
    scene_id: int
    subject_category: int
    predicate_id: int
    object_category: int
    gt_subject_boxes: tuple
    gt_object_boxes: tuple
    subject_entities: tuple = ()
    object_entities: tuple = ()
    # entity-index pairs that satisfy the queried relation
    pairs: tuple = ()

    @property
    def triple(self):
        return (self.subject_category, self.predicate_id, self.object_category)


@dataclass(frozen=True, eq=False)
class Proposal:
    box: Box
    feature_vector: np.ndarray
    spatial_feature: np.ndarray
    feature_map: Optional[np.ndarray] = None


@dataclass(eq=False)
class ProposalSet:
    """All proposals of one scene in array form; indexing yields :class:`Proposal`."""

    scene_id: int
    boxes: np.ndarray  # (N, 4)
    feature_vectors: np.ndarray  # (N, D)
    image_size: tuple
    featurizer: Optional["RegionFeaturizer"] = field(default=None, repr=False)

    def __post_init__(self):
        self.spatial = spatial_features(self.boxes, *self.image_size)

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, i):
        fmap = None
        if self.featurizer is not None:
            fmap = self.featurizer(self.boxes[i:i + 1])[0][0]
        return Proposal(Box.from_array(self.boxes[i]), self.feature_vectors[i], self.spatial[i], fmap)

    @property
    def inputs(self):
        """Per-proposal representation ``feature_vector || spatial_feature``."""
        return np.concatenate([self.feature_vectors, self.spatial], axis=1)


@dataclass
class EmbeddingTable:
    weights: np.ndarray  # (vocab, E)

    @classmethod
    def init(cls, vocab_size, dim, rng=None):
        rng = np.random.default_rng(rng)
        return cls(rng.uniform(-1.0, 1.0, size=(vocab_size, dim)))

    @property
    def vocab_size(self):
        return self.weights.shape[0]


def embed_phrase(category_id, table):
    """Return a copy of the table row for ``category_id``."""
    if not 0 <= int(category_id) < table.vocab_size or int(category_id) != category_id:
        raise IndexError(f"category {category_id!r} outside vocabulary of size {table.vocab_size}")
    return table.weights[int(category_id)].copy()


def category_appearance(category_id):
    """Color (uint8 triple) and shape kind that render ``category_id``."""
    color = PALETTE[category_id % len(PALETTE)]
    shape = SHAPE_KINDS[(category_id // len(PALETTE) + category_id) % len(SHAPE_KINDS)]
    return color, shape


def _center(b):
    return 0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max)


def _make_rules(image_w, image_h):
    diag = math.hypot(image_w, image_h)

    def dist(a, b):
        (ax, ay), (bx, by) = _center(a), _center(b)
        return math.hypot(ax - bx, ay - by)

    def overlaps(a, b):
        return min(a.x_max, b.x_max) > max(a.x_min, b.x_min) and min(a.y_max, b.y_max) > max(a.y_min, b.y_min)

    return {
        "left_of": lambda a, b: _center(a)[0] < _center(b)[0] - DIRECTION_MARGIN,
        "right_of": lambda a, b: _center(a)[0] > _center(b)[0] + DIRECTION_MARGIN,
        "above": lambda a, b: _center(a)[1] < _center(b)[1] - DIRECTION_MARGIN,
        "below": lambda a, b: _center(a)[1] > _center(b)[1] + DIRECTION_MARGIN,
        "near": lambda a, b: dist(a, b) < NEAR_FRACTION * diag,
        "larger_than": lambda a, b: a.area > SIZE_RATIO * b.area,
        "smaller_than": lambda a, b: SIZE_RATIO * a.area < b.area,
        "far_from": lambda a, b: dist(a, b) > FAR_FRACTION * diag,
        "overlaps": overlaps,
        "inside": lambda a, b: (a.x_min >= b.x_min and a.y_min >= b.y_min
                                and a.x_max <= b.x_max and a.y_max <= b.y_max),
    }


def compute_relations(boxes, spec):
    """Apply the first ``spec.num_predicates`` rules to every ordered entity pair."""
    rules = _make_rules(spec.image_width, spec.image_height)
    names = spec.predicate_names
    out = []
    for s, o in permutations(range(len(boxes)), 2):
        for p, name in enumerate(names):
            if rules[name](boxes[s], boxes[o]):
                out.append((s, p, o))
    return tuple(sorted(out))


def _shape_mask(kind, box, image_w, image_h):
    ys = np.arange(image_h)[:, None] + 0.5
    xs = np.arange(image_w)[None, :] + 0.5
    inside = (xs >= box.x_min) & (xs < box.x_max) & (ys >= box.y_min) & (ys < box.y_max)
    if kind == "rectangle":
        return inside
    cx, cy = _center(box)
    if kind == "ellipse":
        rx, ry = box.width / 2, box.height / 2
        return inside & (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0)
    # isosceles triangle, apex at top center
    half = (ys - box.y_min) / box.height * (box.width / 2)
    return inside & (np.abs(xs - cx) <= half)


def render(entities, image_w, image_h):
    """Rasterize entities onto the background (uint8), largest box first.

    Painting in decreasing area keeps a contained entity visible on top of
    its container; equal areas keep list order.
    """
    img = np.empty((image_h, image_w, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for ent in sorted(entities, key=lambda e: -e.box.area):
        color = tuple(int(round(c * 255)) for c in ent.color)
        img[_shape_mask(ent.shape_kind, ent.box, image_w, image_h)] = color
    return img


def _place_entities(spec, rng, n):
    boxes = []
    for _ in range(n):
        for _try in range(50):
            w = int(rng.integers(spec.min_entity_side, spec.max_entity_side + 1))
            h = int(rng.integers(spec.min_entity_side, spec.max_entity_side + 1))
            x0 = int(rng.integers(0, spec.image_width - w + 1))
            y0 = int(rng.integers(0, spec.image_height - h + 1))
            cand = Box(float(x0), float(y0), float(x0 + w), float(y0 + h))
            if not boxes or pairwise_iou(cand.to_array(), as_boxes(boxes)).max() < spec.max_entity_iou:
                boxes.append(cand)
                break
        else:
            return None
    return boxes


def generate_scene(spec, scene_seed):
    """Deterministically build scene ``scene_seed``.

    Failed placements retry with an incremented sub-seed; after 100 attempts a
    :class:`GenerationError` is raised.
    """
    for attempt in range(100):
        rng = np.random.default_rng([spec.seed, int(scene_seed), attempt])
        n = int(rng.integers(spec.entities_per_scene_min, spec.entities_per_scene_max + 1))
        cats = rng.integers(0, spec.num_object_categories, size=n)
        boxes = _place_entities(spec, rng, n)
        if boxes is None:
            continue
        entities = []
        for c, b in zip(cats, boxes):
            color, kind = category_appearance(int(c))
            entities.append(Entity(int(c), b, tuple(v / 255.0 for v in color), kind))
        raster = render(entities, spec.image_width, spec.image_height).astype(np.float64) / 255.0
        return Scene(int(scene_seed), tuple(entities), compute_relations(boxes, spec), raster)
    raise GenerationError(f"could not place entities for scene {scene_seed} after 100 attempts")


def derive_queries(scene, first_query_id=0):
    """One query per distinct (subject category, predicate, object category) in the scene."""
    groups = {}
    for s, p, o in scene.relations:
        key = (scene.entities[s].category_id, p, scene.entities[o].category_id)
        groups.setdefault(key, []).append((s, o))
    queries = []
    for qid, (key, pairs) in enumerate(sorted(groups.items()), start=first_query_id):
        subs = tuple(sorted({s for s, _ in pairs}))
        objs = tuple(sorted({o for _, o in pairs}))
        queries.append(
            Query(
                query_id=qid,
                scene_id=scene.id,
                subject_category=key[0],
                predicate_id=key[1],
                object_category=key[2],
                gt_subject_boxes=tuple(scene.entities[i].box for i in subs),
                gt_object_boxes=tuple(scene.entities[i].box for i in objs),
                subject_entities=subs,
                object_entities=objs,
                pairs=tuple(sorted(pairs)),
            )
        )
    return queries


class RegionFeaturizer:
    """ROI-align style sampler over a per-scene channel image.

    Channels: RGB, image-normalized x and y of the sample point, luminance
    gradient magnitude, foreground mask, luminance. Each grid cell averages a
    2x2 set of bilinear samples. Returns maps ``(n, H, W, D)`` and their
    spatial means ``(n, D)``.
    """

    def __init__(self, scene, grid=7, samples=2):
        self.grid = grid
        self.samples = samples
        self.image = channel_image(scene.raster)

    def __call__(self, boxes):
        b = as_boxes(boxes)
        if np.any(b[:, 2] - b[:, 0] <= 0) or np.any(b[:, 3] - b[:, 1] <= 0):
            raise InvalidRegionError("cannot featurize a zero-area region")
        img = self.image
        h_img, w_img, _ = img.shape
        g, s = self.grid, self.samples
        frac = (np.arange(g)[:, None] + (np.arange(s)[None, :] + 0.5) / s) / g  # (g, s)
        px = b[:, 0, None, None] + frac[None] * (b[:, 2] - b[:, 0])[:, None, None]  # (n, g, s)
        py = b[:, 1, None, None] + frac[None] * (b[:, 3] - b[:, 1])[:, None, None]
        u = np.clip(px - 0.5, 0.0, w_img - 1)
        v = np.clip(py - 0.5, 0.0, h_img - 1)
        u0 = np.floor(u).astype(int)
        v0 = np.floor(v).astype(int)
        u1 = np.minimum(u0 + 1, w_img - 1)
        v1 = np.minimum(v0 + 1, h_img - 1)
        fu = (u - u0)[:, None, None, :, :, None]  # (n, 1, 1, gx, sx, 1)
        fv = (v - v0)[:, :, :, None, None, None]  # (n, gy, sy, 1, 1, 1)
        rows0, rows1 = v0[:, :, :, None, None], v1[:, :, :, None, None]
        cols0, cols1 = u0[:, None, None, :, :], u1[:, None, None, :, :]
        top = img[rows0, cols0] * (1 - fu) + img[rows0, cols1] * fu
        bot = img[rows1, cols0] * (1 - fu) + img[rows1, cols1] * fu
        samp = top * (1 - fv) + bot * fv  # (n, gy, sy, gx, sx, D)
        maps = samp.mean(axis=(2, 4))
        return maps, maps.mean(axis=(1, 2))


def channel_image(raster):
    h, w, _ = raster.shape
    luma = raster.mean(axis=2)
    gy, gx = np.gradient(luma)
    edge = np.clip(np.hypot(gx, gy), 0.0, 1.0)
    bg = np.array(BACKGROUND) / 255.0
    mask = np.any(np.abs(raster - bg) > 1e-9, axis=2).astype(np.float64)
    xs = np.broadcast_to((np.arange(w) + 0.5) / w, (h, w))
    ys = np.broadcast_to(((np.arange(h) + 0.5) / h)[:, None], (h, w))
    return np.dstack([raster, xs, ys, edge, mask, luma])


def featurize_region(scene, box, W=7, H=7):
    """Feature map ``(H, W, D)`` and pooled vector ``(D,)`` for one region."""
    if W != H:
        raise ValueError("only square grids are supported")
    b = as_boxes(box)[0]
    b = clip_boxes(b, *scene.image_size, min_size=0.0)
    maps, vecs = RegionFeaturizer(scene, grid=W)(b[None])
    return maps[0], vecs[0]


def _as_f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def generate_proposals(scene, spec, rng_seed):
    """``spec.proposal_count`` boxes: jittered copies of each entity plus random boxes.

    Coordinates and pooled features are rounded to float32 so that the
    in-memory proposals equal what the dataset files store.
    """
    w, h = spec.image_width, spec.image_height
    rng = np.random.default_rng([spec.seed, int(rng_seed), 7919])
    n_total = spec.proposal_count
    jittered = []
    for ent in scene.entities:
        b = ent.box
        for _ in range(spec.jitter_copies):
            noise = rng.uniform(-spec.jitter_fraction, spec.jitter_fraction, size=4)
            jittered.append([
                b.x_min + noise[0] * b.width,
                b.y_min + noise[1] * b.height,
                b.x_max + noise[2] * b.width,
                b.y_max + noise[3] * b.height,
            ])
    jittered = np.array(jittered, dtype=np.float64).reshape(-1, 4)
    n_rand = n_total - len(jittered)
    area = rng.uniform(0.01, 0.6, size=n_rand) * w * h
    aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=n_rand))
    bw = np.minimum(np.sqrt(area * aspect), w)
    bh = np.minimum(np.sqrt(area / aspect), h)
    x0 = rng.uniform(0, 1, size=n_rand) * (w - bw)
    y0 = rng.uniform(0, 1, size=n_rand) * (h - bh)
    rand = np.stack([x0, y0, x0 + bw, y0 + bh], axis=1)
    boxes = np.concatenate([jittered, rand], axis=0)
    boxes[:, [0, 2]] = np.sort(boxes[:, [0, 2]], axis=1)
    boxes[:, [1, 3]] = np.sort(boxes[:, [1, 3]], axis=1)
    boxes = _as_f32(clip_boxes(boxes, w, h))
    boxes = boxes[rng.permutation(len(boxes))]
    featurizer = RegionFeaturizer(scene, grid=spec.grid_size)
    _, vecs = featurizer(boxes)
    return ProposalSet(scene.id, boxes, _as_f32(vecs), (w, h), featurizer)


def split_scene_ids(scene_ids, num_test, seed=0):
    """Hash-ordered split: the ``num_test`` ids with the smallest digests are test."""
    def digest(i):
        return hashlib.sha256(f"{seed}:{i}".encode()).hexdigest()

    ordered = sorted(scene_ids, key=digest)
    test = sorted(ordered[:num_test])
    train = sorted(ordered[num_test:])
    return train, test


def ambiguity_rate(scenes_by_id, queries):
    """Fraction of queries whose subject or object category occurs more than once in its scene."""
    if not queries:
        return 0.0
    amb = 0
    for q in queries:
        cats = [e.category_id for e in scenes_by_id[q.scene_id].entities]
        if cats.count(q.subject_category) > 1 or cats.count(q.object_category) > 1:
            amb += 1
    return amb / len(queries)


@dataclass
class Dataset:
    spec: DatasetSpec
    scenes: dict  # id -> Scene
    queries: list
    proposals: dict  # scene id -> ProposalSet
    train_ids: list
    test_ids: list

    def queries_for(self, scene_ids):
        ids = set(scene_ids)
        return [q for q in self.queries if q.scene_id in ids]

    @property
    def train_queries(self):
        return self.queries_for(self.train_ids)

    @property
    def test_queries(self):
        return self.queries_for(self.test_ids)

    def stats(self):
        return {
            "scene_count": len(self.scenes),
            "train_scenes": len(self.train_ids),
            "test_scenes": len(self.test_ids),
            "query_count": len(self.queries),
            "relation_count": sum(len(s.relations) for s in self.scenes.values()),
            "ambiguity_rate": ambiguity_rate(self.scenes, self.queries),
        }


def generate_dataset(spec, num_train, num_test):
    """Generate ``num_train + num_test`` scenes, their queries and proposals."""
    ids = list(range(num_train + num_test))
    scenes = {i: generate_scene(spec, i) for i in ids}
    queries = []
    for i in ids:
        queries.extend(derive_queries(scenes[i], first_query_id=len(queries)))
    proposals = {i: generate_proposals(scenes[i], spec, i) for i in ids}
    train, test = split_scene_ids(ids, num_test, spec.seed)
    return Dataset(spec, scenes, queries, proposals, train, test)
