import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmattn import InvalidArgument, MaskPolicy, build_causal, build_mask
from mmattn.flow import audit_layout, audit_training, format_report, min_leak_depth, one_step_flow, reach, reach_bfs
from mmattn.layout import layout_from_roles
from mmattn.model import ModelParams

from helpers import future_influence, tiny_config
from strategies import general_layouts, pairwise_layouts

PT = layout_from_roles([("IMAGE", 2), ("CAPTION", 3)])
SFT = layout_from_roles([("IMAGE", 2), ("QUERY", 2), ("ANSWER", 2)])


def test_one_step_flow_causal():
    assert np.array_equal(one_step_flow(build_causal(3)).receives, np.tri(3, dtype=bool))


def test_one_step_flow_pairwise_row0():
    g = one_step_flow(build_mask(layout_from_roles([("IMAGE", 2), ("QUERY", 2)]), "MMA_PAIRWISE"))
    assert g.receives[0].tolist() == [True, False, True, True]
    assert np.all(np.diag(g.receives))


@pytest.mark.parametrize("depth", [0, 1, 3, 10])
def test_causal_reach_is_lower_triangular(depth):
    r = reach(one_step_flow(build_causal(6)), depth)
    assert np.array_equal(r, np.eye(6, dtype=bool) if depth == 0 else np.tri(6, dtype=bool))


def test_two_hop_path_through_image():
    g = one_step_flow(build_mask(layout_from_roles([("IMAGE", 2), ("QUERY", 2)]), "MMA_PAIRWISE"))
    assert not reach(g, 1)[2, 3]
    r2 = reach(g, 2)
    assert r2[2, 3]
    # the witness path 2 -> 0 -> 3
    assert g.receives[2, 0] and g.receives[0, 3]


def test_reach_negative_depth():
    with pytest.raises(InvalidArgument):
        reach(one_step_flow(build_causal(2)), -1)


@settings(max_examples=60, deadline=None)
@given(st.one_of(pairwise_layouts(max_len=8), general_layouts(max_len=8)), st.integers(0, 6))
def test_reach_monotone_and_matches_bfs(layout, depth):
    policies = [MaskPolicy.CAUSAL, MaskPolicy.MMA_GENERALIZED]
    try:
        build_mask(layout, MaskPolicy.MMA_PAIRWISE)
        policies.append(MaskPolicy.MMA_PAIRWISE)
    except InvalidArgument:
        pass
    for policy in policies:
        g = one_step_flow(build_mask(layout, policy))
        lo, hi = reach(g, depth), reach(g, depth + 1)
        assert np.all(hi | ~lo)
        assert np.array_equal(lo, reach_bfs(g, depth))


def test_pt_caption_setup_leaks_at_depth_two():
    mask, loss, report = audit_layout(PT, "MMA_PAIRWISE", "CAPTION", 2)
    assert report.leaks
    assert sorted({p for p, _ in report.leaky_positions}) == [2, 3]
    assert (2, 3) in report.leaky_positions
    assert min_leak_depth(PT, mask, loss) == 2
    assert not audit_training(PT, mask, loss, 1).leaks


def test_sft_setup_never_leaks():
    mask, loss, _ = audit_layout(SFT, "MMA_PAIRWISE", "ANSWER", 1)
    for depth in range(1, SFT.total_len + 1):
        assert not audit_training(SFT, mask, loss, depth).leaks
    assert min_leak_depth(SFT, mask, loss) is None


def test_single_caption_token_cannot_leak():
    lay = layout_from_roles([("IMAGE", 2), ("CAPTION", 1)])
    mask, loss, report = audit_layout(lay, "MMA_PAIRWISE", "CAPTION", 4)
    assert not report.leaks and min_leak_depth(lay, mask, loss) is None


@settings(max_examples=60, deadline=None)
@given(general_layouts(max_len=6), st.data())
def test_causal_never_leaks(layout, data):
    loss = np.array(data.draw(st.lists(st.booleans(), min_size=layout.total_len, max_size=layout.total_len)))
    mask = build_causal(layout.total_len)
    assert min_leak_depth(layout, mask, loss) is None
    assert not audit_training(layout, mask, loss, layout.total_len).leaks


def test_audit_errors():
    with pytest.raises(InvalidArgument):
        audit_layout(PT, "MMA_PAIRWISE", "QUERY", 2)
    with pytest.raises(InvalidArgument):
        audit_training(PT, build_causal(5), np.ones(4, dtype=bool), 2)
    with pytest.raises(InvalidArgument):
        audit_training(PT, build_causal(5), np.ones(5, dtype=bool), 0)


def test_format_report_fields():
    mask, loss, report = audit_layout(PT, "MMA_PAIRWISE", "CAPTION", 2)
    text = format_report(PT, "MMA_PAIRWISE", "CAPTION", mask, loss, report)
    lines = dict(line.split(" = ", 1) for line in text.splitlines())
    assert lines["min_leak_depth"] == "2"
    assert lines["leak_free"] == "false"
    assert lines["loss_positions"] == "2 3 4"
    assert lines["leaky_loss_rows"] == "2 3"


SETUPS = [
    (PT, "MMA_PAIRWISE", "CAPTION"),
    (PT, "CAUSAL", "CAPTION"),
    (SFT, "MMA_PAIRWISE", "ANSWER"),
    (SFT, "CAUSAL", "ANSWER"),
    (layout_from_roles([("IMAGE", 3), ("CAPTION", 4)]), "MMA_GENERALIZED", "CAPTION"),
]


@pytest.mark.parametrize("layout, policy, role", SETUPS)
def test_audit_is_sound_against_the_model(layout, policy, role):
    cfg = tiny_config(n_layers=2)
    mask, loss, report = audit_layout(layout, policy, role, cfg.n_layers)
    effects = []
    for seed in range(3):
        params = ModelParams.init(cfg, seed=seed)
        for t in params:
            t.data[...] += np.random.default_rng(seed).standard_normal(t.shape) * 0.2
        effects.append(future_influence(params, layout, mask, loss, seed))
    effect = np.max(effects, axis=0)
    flagged = np.zeros_like(effect, dtype=bool)
    for p, q in report.leaky_positions:
        flagged[p, q] = True
    assert np.all(effect[~flagged] < 1e-10)
    if report.leaks:
        assert effect[flagged].max() > 1e-6
