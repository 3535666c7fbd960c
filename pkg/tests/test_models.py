"""Forecaster contract, structural properties and attention reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodgtn.data import ChannelSpec, Layout, TimeSeriesFrame, WindowSet, fit_scaler, sliding_windows
from floodgtn.graph import build_graph
from floodgtn.hydrology import channel_layout
from floodgtn.models import (
    LEARNED_ARCHITECTURES,
    AttentionNotSupported,
    ModelConfig,
    ModelError,
    build_model,
    extract_attention,
    forward,
    load_model,
    tcn_receptive_field,
)
from floodgtn.models.features import FeatureMap
from floodgtn.nn import CheckpointError, Tensor, mse, no_grad
from floodgtn.nn.layers import gcn_layer
from floodgtn.training import TrainConfig, train

SMALL = dict(hidden_dim=8, n_heads=2, dropout=0.0)


def fitted(arch, windows, **kw):
    model = build_model(ModelConfig(arch, **{**SMALL, **kw}), windows.layout)
    model.scaler = fit_scaler(windows)
    return model


def random_windows(layout, n, w, k, seed=0):
    rng = np.random.default_rng(seed)
    f, c, m = layout.n_channels, len(layout.covariate_columns), len(layout.target_columns)
    return WindowSet(rng.normal(size=(n, w, f)), rng.normal(size=(n, k, c)), rng.normal(size=(n, k, m)),
                     np.arange(w - 1, w - 1 + n), np.datetime64("2020-01-01").astype(object), layout)


@pytest.fixture(scope="module")
def windows(small_windows):
    return small_windows[:40]


# -- contract -------------------------------------------------------------------------

@pytest.mark.parametrize("arch", LEARNED_ARCHITECTURES + ("persistence",))
def test_default_config_emits_24_by_4(arch, small_windows):
    model = build_model(ModelConfig(arch), small_windows.layout)
    model.scaler = fit_scaler(small_windows)
    fc = forward(model, small_windows[5])
    assert fc.y_hat.shape == (24, 4)
    assert np.isfinite(fc.y_hat).all()
    assert fc.target_names == ("S1", "S2", "S3", "S5")
    assert fc.anchor == small_windows.anchor_time(5)


def test_persistence_repeats_last_level(windows):
    model = fitted("persistence", windows)
    y = model.predict(windows)
    last = windows.x_past[:, -1, list(windows.layout.target_columns)]
    assert np.allclose(y, np.repeat(last[:, None, :], 24, axis=1), atol=1e-12)
    assert model.parameters().count() == 0


@pytest.mark.parametrize("arch", LEARNED_ARCHITECTURES)
def test_forward_is_bit_deterministic(arch, windows):
    a = fitted(arch, windows, seed=3).predict(windows[:4])
    b = fitted(arch, windows, seed=3).predict(windows[:4])
    c = fitted(arch, windows, seed=3)
    assert a.tobytes() == b.tobytes()
    assert c.predict(windows[:4]).tobytes() == c.predict(windows[:4]).tobytes()


@pytest.mark.parametrize("arch", LEARNED_ARCHITECTURES + ("persistence",))
def test_masked_arm_ignores_future_covariates(arch, windows):
    model = fitted(arch, windows, use_future_covariates=False)
    replaced = WindowSet(windows.x_past, np.random.default_rng(9).normal(size=windows.x_cov_future.shape) * 50.0,
                         windows.y_true, windows.anchors, windows.start_time, windows.layout)
    assert model.predict(windows).tobytes() == model.predict(replaced).tobytes()
    # same parameter shapes in both arms
    other = fitted(arch, windows, use_future_covariates=True)
    assert {n: p.shape for n, p in model.parameters().items()} == {n: p.shape for n, p in other.parameters().items()}


@pytest.mark.parametrize("arch", LEARNED_ARCHITECTURES)
def test_gradient_reaches_every_parameter(arch, windows):
    model = fitted(arch, windows)
    x_past, x_cov = model.prepare(windows[:6])
    y = model.scaler.transform(windows[:6]).y_true
    params = model.parameters()
    params.zero_grad()
    mse(model.net(x_past, x_cov), Tensor(y)).backward()
    dead = [name for name, p in params.items() if not np.any(p.grad)]
    assert dead == []


@pytest.mark.parametrize("arch", ["rnn", "transformer", "gtn-parallel"])
def test_eval_output_independent_of_dropout_seed(arch, windows):
    model = fitted(arch, windows, dropout=0.3)
    model.train_mode(1)
    a = model.predict(windows[:3])
    model.train_mode(2)
    b = model.predict(windows[:3])
    assert a.tobytes() == b.tobytes()
    x_past, x_cov = model.prepare(windows[:3])
    model.train_mode(1)
    noisy = model.net(x_past, x_cov).data
    model.eval_mode()
    assert not np.array_equal(noisy, model.net(x_past, x_cov).data)


def test_shape_and_layout_mismatch_rejected(windows, small_frame, graph):
    model = fitted("rnn", windows)
    with pytest.raises(ModelError, match="w=48"):
        model.predict(sliding_windows(small_frame, 48, 24, graph))
    with pytest.raises(ModelError, match="scaler"):
        build_model(ModelConfig("rnn", **SMALL), windows.layout).predict(windows)


def test_divergent_parameters_raise(windows):
    model = fitted("gcn", windows)
    model.parameters()["head.weight"].data[:] = np.nan
    with pytest.raises(ModelError, match="non-finite"):
        model.predict(windows[:2])


def test_model_config_validation():
    with pytest.raises(ValueError, match="unknown architecture"):
        ModelConfig("lstm")
    with pytest.raises(ValueError, match="multiple of n_heads"):
        ModelConfig("transformer", hidden_dim=30, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig("rnn", w=0)
    assert ModelConfig("rnn").w == 72 and ModelConfig("rnn").k == 24
    assert ModelConfig.from_dict(ModelConfig("tcn").to_dict()) == ModelConfig("tcn")


@st.composite
def small_layouts(draw):
    """A random path of stations with a gauge, optional structures and a tide node."""
    n = draw(st.integers(1, 4))
    stations = [f"S{i}" for i in range(n)]
    nodes = [{"id": s, "kind": "water-level-station"} for s in stations]
    edges = [[a, b] for a, b in zip(stations, stations[1:])]
    nodes.append({"id": "R0", "kind": "rain-gauge"})
    edges.append(["R0", stations[0]])
    if draw(st.booleans()):
        nodes.append({"id": "T0", "kind": "tide-boundary"})
        edges.append([stations[-1], "T0"])
    if draw(st.booleans()):
        nodes.append({"id": "G0", "kind": "gate"})
        edges.append([stations[0], "G0"])
    targets = draw(st.lists(st.sampled_from(stations), min_size=1, unique=True))
    graph = build_graph({"nodes": nodes, "edges": edges, "targets": targets})
    return Layout(graph, channel_layout(graph))


@settings(max_examples=25, deadline=None)
@given(small_layouts(), st.integers(6, 12), st.integers(2, 5), st.sampled_from(LEARNED_ARCHITECTURES))
def test_contract_over_random_configs(layout, w, k, arch):
    ws = random_windows(layout, 3, w, k)
    model = build_model(ModelConfig(arch, w=w, k=k, conv_layers=2, tcn_layers=3, **SMALL), layout)
    model.scaler = fit_scaler(ws)
    y = model.predict(ws)
    assert y.shape == (3, k, len(layout.graph.targets))
    assert np.isfinite(y).all()


# -- architecture-specific structure ------------------------------------------------------

def test_tcn_receptive_field_covers_window():
    assert tcn_receptive_field(6, 3) == 127
    assert tcn_receptive_field(6, 3) >= 72 + 24
    assert [tcn_receptive_field(layers, 3) for layers in range(1, 4)] == [3, 7, 15]


def test_tcn_is_causal_in_time(windows):
    model = fitted("tcn", windows)
    x_past, x_cov = model.prepare(windows[:2])
    seq = model.features.sequence(x_past, x_cov)
    base = model.net(x_past, x_cov).data
    # perturbing the last forecast hour's covariates leaves earlier steps alone
    bumped = x_cov.copy()
    bumped[:, -1, :] += 5.0
    out = model.net(x_past, bumped).data
    assert np.array_equal(out[:, :-1], base[:, :-1])
    assert not np.array_equal(out[:, -1], base[:, -1])
    assert seq.shape == (2, 96, 13)


def _permuted_layout(layout, order):
    return Layout(layout.graph.reordered(order), layout.channels)


def test_series_station_permutation_invariance(windows):
    layout = windows.layout
    model = fitted("gtn-series", windows)
    order = list(reversed(layout.graph.node_ids))
    perm_layout = _permuted_layout(layout, order)
    twin = build_model(model.config, perm_layout)
    twin.scaler = model.scaler
    assert all(np.array_equal(a.data, b.data) for a, b in zip(model.parameters().values(), twin.parameters().values()))
    perm_windows = WindowSet(windows.x_past, windows.x_cov_future, windows.y_true, windows.anchors,
                             windows.start_time, perm_layout)
    assert np.allclose(twin.predict(perm_windows[:5]), model.predict(windows[:5]), atol=1e-12)


def test_series_single_station_is_transformer_then_lstm():
    graph = build_graph({"nodes": [{"id": "S1", "kind": "water-level-station"}], "targets": ["S1"]})
    layout = Layout(graph, (ChannelSpec("S1_level", "S1", "water-level"),))
    frame = TimeSeriesFrame(np.datetime64("2020-01-01").astype(object), layout.channels,
                            np.sin(np.arange(60.0))[:, None], np.zeros((60, 1), dtype=bool))
    ws = sliding_windows(frame, 12, 4, graph)
    model = build_model(ModelConfig("gtn-series", w=12, k=4, **SMALL), layout)
    model.scaler = fit_scaler(ws)
    x_past, x_cov = model.prepare(ws[:3])
    with no_grad():
        got = model.net(x_past, x_cov).data
        # by hand: encoder on the node's own trace, each GCN layer as relu(H W + b), LSTM, head
        slots = model.features.node_slots(x_past, x_cov)[:, :, 0, :]
        h = model.encoder(model.embed(Tensor(slots)))
        for layer in model.gcn:
            ref = gcn_layer(Tensor(h.data[:, :, None, :]), np.array([[1.0]]), layer.weight, layer.bias).data[:, :, 0]
            h = Tensor(np.maximum(h.data @ layer.weight.data + layer.bias.data, 0.0))
            assert np.allclose(ref, h.data, atol=1e-12)
        states = model.lstm(h).data[:, 12:, :]
        expected = (states * model.head.data).sum(axis=-1) + model.head_bias.data
    assert np.allclose(got[:, :, 0], expected, atol=1e-12)


def test_covariate_patches_pad_at_start():
    graph = build_graph({"nodes": [{"id": "S1", "kind": "water-level-station"}, {"id": "R1", "kind": "rain-gauge"}],
                         "edges": [["S1", "R1"]], "targets": ["S1"]})
    fmap = FeatureMap(Layout(graph, channel_layout(graph)))
    x_past = np.arange(7.0).reshape(1, 7, 1).repeat(2, axis=2)
    x_cov = np.array([[[7.0], [8.0]]])
    patches = fmap.covariate_patches(x_past, x_cov, 4)
    assert patches.shape == (1, 1, 3, 4)
    flat = patches[0, 0].ravel()
    assert flat[:3].tolist() == [0.0, 0.0, 0.0] and flat[3:].tolist() == [float(v) for v in range(9)]


def test_parallel_tokens_carry_only_their_own_channel(windows):
    model = fitted("gtn-parallel", windows)
    x_past, x_cov = model.prepare(windows[:2])
    base = model.covariate_memory(x_past, x_cov).data
    c = 3
    column = model.layout.covariate_columns[c]
    past, cov = x_past.copy(), x_cov.copy()
    past[:, :, column] += 2.0
    cov[:, :, c] -= 1.0
    moved = model.covariate_memory(past, cov).data
    changed = np.abs(moved - base).max(axis=(0, 2)) > 0
    assert changed.tolist() == [i == c for i in range(base.shape[1])]


@pytest.fixture(scope="module")
def trained_parallel(small_windows):
    model = build_model(ModelConfig("gtn-parallel", **SMALL), small_windows.layout)
    train(model, small_windows, TrainConfig(epochs=3, batch_size=16))
    return model


def test_parallel_covariate_ablation_changes_output(trained_parallel, small_windows):
    model = trained_parallel
    base = model.predict(small_windows[:10])
    model.ablate_covariates = True
    try:
        ablated = model.predict(small_windows[:10])
    finally:
        model.ablate_covariates = False
    assert np.isfinite(ablated).all()
    assert np.abs(base - ablated).max() > 1e-6


# -- attention ----------------------------------------------------------------------------

def test_attention_rows_sum_to_one(trained_parallel, small_windows):
    table = extract_attention(trained_parallel, small_windows[:20])
    assert table.weights.shape == (4, 24, 7)
    assert np.allclose(table.weights.sum(axis=-1), 1.0, atol=1e-6)
    assert table.covariates == tuple(small_windows.layout.covariate_names)
    rows = list(table.rows())
    assert len(rows) == 4 * 24 * 7 and rows[0][:3] == ("S1", 1, "G1_gate")
    fc = forward(trained_parallel, small_windows[0])
    assert fc.attention.shape == (4, 24, 7)
    assert np.allclose(fc.attention.sum(axis=-1), 1.0, atol=1e-6)


def test_single_covariate_attention_is_all_ones():
    graph = build_graph({"nodes": [{"id": "S1", "kind": "water-level-station"}, {"id": "T0", "kind": "tide-boundary"}],
                         "edges": [["S1", "T0"]], "targets": ["S1"]})
    layout = Layout(graph, channel_layout(graph))
    ws = random_windows(layout, 4, 8, 3)
    model = build_model(ModelConfig("gtn-parallel", w=8, k=3, **SMALL), layout)
    model.scaler = fit_scaler(ws)
    table = extract_attention(model, ws)
    assert np.array_equal(table.weights, np.ones((1, 3, 1)))


@pytest.mark.parametrize("arch", ["rnn", "gtn-series", "persistence"])
def test_attention_not_supported(arch, windows):
    with pytest.raises(AttentionNotSupported, match="not supported"):
        extract_attention(fitted(arch, windows), windows[:2])
    assert forward(fitted(arch, windows), windows[0]).attention is None


# -- checkpoints ----------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, trained_parallel, small_windows):
    path = tmp_path / "p.fgtn"
    trained_parallel.save(path)
    back = load_model(path, expected=trained_parallel.config)
    assert back.predict(small_windows[:5]).tobytes() == trained_parallel.predict(small_windows[:5]).tobytes()
    with pytest.raises(CheckpointError, match="does not match"):
        load_model(path, expected=ModelConfig("gtn-parallel"))
