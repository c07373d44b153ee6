import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpbandits.model import (
    BanditInstance,
    LatentPreferenceModel,
    ObservationHistory,
    PreferenceOrdering,
    best_arm,
    is_consistent,
    rank_of,
)

permutations = st.integers(min_value=1, max_value=8).flatmap(
    lambda k: st.permutations(list(range(k)))
)


def test_rank_of_examples():
    o = PreferenceOrdering((2, 0, 1))
    assert rank_of(o, 2) == 0
    assert rank_of(o, 1) == 2
    ident = PreferenceOrdering(tuple(range(5)))
    for a in range(5):
        assert rank_of(ident, a) == a


def test_rank_of_out_of_range():
    o = PreferenceOrdering((1, 0))
    with pytest.raises(ValueError):
        rank_of(o, 2)
    with pytest.raises(ValueError):
        rank_of(o, -1)


@given(permutations)
def test_rank_of_inverts_order(perm):
    o = PreferenceOrdering(tuple(perm))
    for j, arm in enumerate(o.order):
        assert o.rank_of(arm) == j


def test_ordering_rejects_non_permutations():
    with pytest.raises(ValueError):
        PreferenceOrdering((0, 0, 1))
    with pytest.raises(ValueError):
        PreferenceOrdering((1, 2))
    with pytest.raises(ValueError):
        PreferenceOrdering(())


def test_is_consistent_examples():
    o = PreferenceOrdering((0, 1, 2))
    assert is_consistent((3, 2, 1), o)
    assert not is_consistent((1, 2, 3), o)
    for perm in [(0, 1, 2), (2, 1, 0), (1, 0, 2)]:
        assert is_consistent((2, 2, 2), PreferenceOrdering(perm))


def test_is_consistent_tolerance_and_errors():
    o = PreferenceOrdering((0, 1))
    assert not is_consistent((1.0, 1.05), o)
    assert is_consistent((1.0, 1.05), o, tol=0.1)
    with pytest.raises(ValueError):
        is_consistent((1.0, 2.0, 3.0), o)
    with pytest.raises(ValueError):
        is_consistent((1.0, 0.5), o, tol=-1)


def test_best_arm():
    assert best_arm(PreferenceOrdering((2, 0, 1))) == 2
    assert best_arm(PreferenceOrdering((0, 1))) == 0
    assert best_arm(PreferenceOrdering((4, 3, 2, 1, 0))) == 4


def test_model_rejects_duplicates_and_mixed_lengths():
    a = PreferenceOrdering((0, 1, 2))
    b = PreferenceOrdering((2, 1, 0))
    LatentPreferenceModel((a, b))
    with pytest.raises(ValueError):
        LatentPreferenceModel((a, PreferenceOrdering((0, 1, 2))))
    with pytest.raises(ValueError):
        LatentPreferenceModel((a, PreferenceOrdering((1, 0))))


def test_model_json_roundtrip(tmp_path):
    model = LatentPreferenceModel(
        (PreferenceOrdering((2, 0, 1)), PreferenceOrdering((0, 1, 2)))
    )
    data = model.to_dict()
    assert data == {"k": 3, "m": 2, "orderings": [[2, 0, 1], [0, 1, 2]]}
    assert LatentPreferenceModel.from_dict(data) == model

    path = tmp_path / "model.json"
    model.save(path)
    with open(path) as fh:
        assert json.load(fh) == data
    assert LatentPreferenceModel.load(path) == model


def test_model_from_dict_validates_declared_counts():
    with pytest.raises(ValueError):
        LatentPreferenceModel.from_dict({"k": 4, "m": 1, "orderings": [[0, 1, 2]]})
    with pytest.raises(ValueError):
        LatentPreferenceModel.from_dict({"k": 3, "m": 2, "orderings": [[0, 1, 2]]})


def test_instance_properties():
    inst = BanditInstance(0, (1.0, 3.0, 2.0), 1.0)
    assert inst.optimal_arm == 1
    assert inst.optimal_mean == 3.0
    assert np.allclose(inst.gaps(), [2.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        BanditInstance(0, (1.0,), -0.5)


@given(
    st.lists(
        st.tuples(st.integers(0, 4), st.floats(-50, 50, allow_nan=False)),
        max_size=60,
    )
)
def test_history_counts_reconstructible_by_replay(events):
    history = ObservationHistory(5)
    for arm, reward in events:
        history.record(arm, reward)
    counts = [0] * 5
    sums = [0.0] * 5
    for arm, reward in history.events:
        counts[arm] += 1
        sums[arm] += reward
    assert history.counts == counts
    assert np.allclose(history.sums, sums)
    means = history.empirical_means()
    for a in range(5):
        if counts[a]:
            assert means[a] == pytest.approx(sums[a] / counts[a])
        else:
            assert means[a] == 0.0


def test_history_validates():
    history = ObservationHistory(2)
    with pytest.raises(ValueError):
        history.record(2, 1.0)
    history.record(1, 2.5)
    assert len(history) == 1
    assert np.allclose(history.weights(0.5), [0.0, 4.0])
    with pytest.raises(ValueError):
        history.weights(0.0)
