import pytest

from rareval.datamodel import Dataset, EvaluationCase, ReferenceLabel


def make_case(case_id, reference, score=None, predicted=None, **kwargs):
    label = ReferenceLabel.parse(reference) if isinstance(reference, str) else reference
    return EvaluationCase(case_id=case_id, reference=label, score=score, predicted=predicted, **kwargs)


def dataset_from_counts(tp=0, fp=0, fn=0, tn=0, ambiguous=0, **dataset_kwargs):
    """Construct a dataset with exactly the requested confusion cells."""
    cases = []
    specs = [
        ("tp", tp, "positive", True),
        ("fp", fp, "negative", True),
        ("fn", fn, "positive", False),
        ("tn", tn, "negative", False),
        ("amb", ambiguous, "ambiguous", True),
    ]
    for tag, count, reference, predicted in specs:
        for i in range(count):
            cases.append(make_case(f"{tag}-{i}", reference, predicted=predicted))
    return Dataset(cases, **dataset_kwargs)


@pytest.fixture
def small_dataset():
    """2 TP, 1 FN, 1 FP, 6 TN."""
    return dataset_from_counts(tp=2, fp=1, fn=1, tn=6)


@pytest.fixture
def scored_dataset():
    cases = [
        make_case("a", "positive", score=0.9),
        make_case("b", "negative", score=0.8),
        make_case("c", "positive", score=0.7),
        make_case("d", "negative", score=0.2),
        make_case("e", "negative", score=0.1),
    ]
    return Dataset(cases)


__all__ = ["make_case", "dataset_from_counts"]
