import os

from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by tests/test_acceptance.py: (criterion number, passed, detail)
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


import pytest  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset():
    from refrel.scene_synth import DatasetSpec, generate_dataset

    return generate_dataset(DatasetSpec(seed=5), 40, 10)


@pytest.fixture(scope="session")
def tiny_models(tiny_dataset):
    """Small, briefly trained subject/object/predicate models plus a selector."""
    from refrel.inference import role_training_set
    from refrel.predicate import PredicateClassifier, build_training_pairs, samples_to_arrays
    from refrel.proposal import CategoryProposalModel, TopKSelector

    ds = tiny_dataset
    kw = dict(n_categories=ds.spec.num_object_categories, embed_dim=8, hidden_dim=32, n_hidden=1,
              max_iter=150, batch_size=8, learning_rate=1e-3)
    m_sub = CategoryProposalModel(random_state=1, **kw).fit(*role_training_set(ds, ds.train_queries, "subject"))
    m_obj = CategoryProposalModel(random_state=2, **kw).fit(*role_training_set(ds, ds.train_queries, "object"))
    sel = TopKSelector(ds, m_sub, m_obj)
    samples = build_training_pairs(ds, ds.train_queries, sel, ds.spec.num_predicates, k=5, rng_seed=3)
    m_pred = PredicateClassifier(n_predicates=ds.spec.num_predicates, channels=8, max_iter=60,
                                 random_state=4).fit(*samples_to_arrays(samples))
    return m_sub, m_obj, m_pred, sel, samples
