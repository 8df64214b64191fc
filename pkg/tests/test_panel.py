import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrec.errors import ConfigError, DataError
from tsrec.panel import (
    RelationGraph,
    SyntheticSpec,
    TimeSeriesPanel,
    generate_synthetic,
    load_panel,
    load_relations,
    read_panel_dir,
    write_panel_dir,
)


def write_long(path, rows, header="entity_id,date,value"):
    path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


def test_load_three_entities(tmp_path):
    rows = [(e, f"2021-01-0{d}", 10 * k + d) for k, e in enumerate("ABC") for d in range(1, 6)]
    write_long(tmp_path / "v.csv", rows)
    panel = load_panel(tmp_path / "v.csv")
    assert panel.entities == ["A", "B", "C"]
    assert panel.values.shape == (3, 5)
    assert panel.values[2, 4] == 25.0


def test_entity_over_fill_limit_dropped(tmp_path):
    days = [f"2021-01-{d:02d}" for d in range(1, 21)]
    rows = [(e, d, i) for e in "AB" for i, d in enumerate(days)]
    rows += [("C", d, i) for i, d in enumerate(days) if i not in (5, 6)]  # 10% missing
    write_long(tmp_path / "v.csv", rows)
    with pytest.warns(UserWarning):
        panel = load_panel(tmp_path / "v.csv", fill_limit=0.05)
    assert panel.entities == ["A", "B"]


def test_small_gap_forward_filled(tmp_path):
    days = [f"2021-02-{d:02d}" for d in range(1, 28)]
    rows = [("A", d, i) for i, d in enumerate(days)]
    rows += [("B", d, 100 + i) for i, d in enumerate(days) if i != 10]  # under 5% missing
    write_long(tmp_path / "v.csv", rows)
    panel = load_panel(tmp_path / "v.csv", fill_limit=0.05)
    b = panel.values[panel.index("B")]
    assert b[10] == b[9] == 109.0


def test_bad_row_reports_line(tmp_path):
    write_long(tmp_path / "v.csv", [("A", "2021-01-01", 1), ("A", "2021-01-02", "oops")])
    with pytest.raises(DataError, match="row 3"):
        load_panel(tmp_path / "v.csv")


def test_single_survivor_is_error(tmp_path):
    write_long(tmp_path / "v.csv", [("A", "2021-01-01", 1), ("A", "2021-01-02", 2)])
    with pytest.raises(DataError):
        load_panel(tmp_path / "v.csv")


def make_panel(n=4, t=6):
    return TimeSeriesPanel([f"e{i}" for i in range(n)], np.arange(n * t, dtype=float).reshape(n, t),
                           [f"2021-01-{d + 1:02d}" for d in range(t)])


def test_relations_shared_membership(tmp_path):
    panel = make_panel()
    (tmp_path / "r.csv").write_text("entity_id,relation_type_id\ne0,7\ne1,7\ne2,3\nzz,7\n")
    with pytest.warns(UserWarning):
        g = load_relations(tmp_path / "r.csv", panel)
    k = g.relation_types.index("7")
    assert g.a(0, 1)[k] == 1 == g.a(1, 0)[k]
    assert not g.related[3].any() and not g.related[:, 3].any()


def test_nasdaq_shaped_pair_count():
    # 112 industry types over 972 entities; pairs counted once
    rng = np.random.default_rng(0)
    membership = np.zeros((972, 112), dtype=np.uint8)
    membership[np.arange(972), rng.integers(0, 112, 972)] = 1
    g = RelationGraph(membership)
    sizes = membership.sum(axis=0).astype(int)
    assert g.n_related_pairs == int((sizes * (sizes - 1) // 2).sum())


def test_relation_ratio_warning():
    membership = np.zeros((30, 2), dtype=np.uint8)
    membership[:2, 0] = 1
    with pytest.warns(UserWarning, match="relation ratio"):
        RelationGraph(membership).check_ratio()


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(1, 5), st.integers(0, 10_000))
def test_graph_symmetric_zero_diagonal(n, k, seed):
    m = (np.random.default_rng(seed).random((n, k)) < 0.5).astype(np.uint8)
    adj = RelationGraph(m).adjacency
    assert np.array_equal(adj, adj.transpose(1, 0, 2))
    assert not adj[np.arange(n), np.arange(n)].any()


def test_roundtrip_idempotent(tmp_path):
    panel, graph, _ = generate_synthetic(SyntheticSpec(n_entities=8, series_length=40, seed=3))
    write_panel_dir(tmp_path / "a", panel, graph, seed=3)
    p2, g2, _ = read_panel_dir(tmp_path / "a")
    write_panel_dir(tmp_path / "b", p2, g2, seed=3)
    p3, g3, _ = read_panel_dir(tmp_path / "b")
    assert np.array_equal(panel.values, p3.values) and panel.dates == p3.dates
    assert np.array_equal(graph.adjacency, g3.adjacency)
    assert (tmp_path / "a" / "values.csv").read_bytes() == (tmp_path / "b" / "values.csv").read_bytes()


def test_synthetic_all_random_walk():
    spec = SyntheticSpec.from_mix({"random_walk": 1.0}, n_entities=10, series_length=50, noise=1.0,
                                  seed=42)
    panel, _, fam = generate_synthetic(spec)
    assert set(fam.values()) == {"random_walk"}
    steps = np.diff(panel.values, axis=1)
    # a cumulative-sum path: the series is its start plus the running sum of its steps
    assert np.allclose(panel.values[:, 0:1] + np.cumsum(np.c_[np.zeros(10), steps], axis=1), panel.values)


def test_random_walk_flat_days_share():
    spec = SyntheticSpec.from_mix({"random_walk": 1.0}, n_entities=20, series_length=400, seed=1)
    panel, _, _ = generate_synthetic(spec)
    flat = np.mean(np.diff(panel.values, axis=1) == 0.0)
    assert abs(flat - (1 - spec.rw_move_prob)) < 0.03
    # per-step variance is preserved by the 1/sqrt(p) scaling
    assert abs(np.var(np.diff(panel.values, axis=1)) - 1.0) < 0.1


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_entities=12, series_length=30, seed=9)
    a, ga, fa = generate_synthetic(spec)
    b, gb, fb = generate_synthetic(spec)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.array_equal(ga.adjacency, gb.adjacency) and fa == fb


def test_relations_informative_about_family():
    panel, graph, fam = generate_synthetic(SyntheticSpec(n_entities=120, seed=0))
    fams = np.array([fam[e] for e in panel.entities])
    same = fams[:, None] == fams[None, :]
    rel = graph.related
    assert rel[same].mean() > 3 * rel[~same].mean()


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec.from_mix({"random_walk": 0.5, "trend": 0.2})
    with pytest.raises(ConfigError):
        SyntheticSpec(p_intra=1.5)
    with pytest.raises(ConfigError):
        SyntheticSpec(rw_move_prob=0.0)


def test_panel_invariants():
    with pytest.raises(DataError):
        TimeSeriesPanel(["a"], np.zeros((1, 3)), ["1", "2", "3"])
    with pytest.raises(DataError):
        TimeSeriesPanel(["a", "b"], np.array([[1, np.nan], [1, 2]]), ["1", "2"])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_panel()
