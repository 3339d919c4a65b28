import numpy as np
import pytest
import torch
import torch.nn.functional as F

from geoman.codec import CodecConfig, LatentCodec
from geoman.errors import ModalityError, ValidationError
from geoman.i2g import I2GConfig, I2GModel, aggregate_members, infer_i2g, load_i2g, save_i2g, train_i2g
from geoman.v2g import (
    NaiveModel,
    V2GConfig,
    V2GModel,
    load_v2g,
    prepare_clips,
    sample_clip,
    save_v2g,
    train_naive_baseline,
    train_v2g,
)

SMALL = dict(widths=(8, 16), temb_dim=16)


@pytest.fixture(scope="module")
def codec():
    torch.manual_seed(0)
    return LatentCodec(CodecConfig(widths=(4, 8))).eval()


def _randomize(net, seed=0, scale=0.1):
    """Give zero-initialized layers random weights so outputs depend on every input."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            if not p.abs().any():
                p.copy_(torch.randn(p.shape, generator=g) * scale)
    return net


def _maps(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (n, size, size, 3)).astype(np.float32)


def _clips(codec, n=2, frames=4, size=16):
    rgb = [_maps(frames, size, seed=i) for i in range(n)]
    geo = {m: [_maps(frames, size, seed=10 + i + (0 if m == "depth" else 50)) for i in range(n)] for m in ("depth", "normal")}
    return prepare_clips(codec, rgb, geo)


def _states_equal(a, b):
    return all(torch.equal(p, q) for p, q in zip(a.state_dict().values(), b.state_dict().values()))


# ------------------------------------------------------------------ I2G


def test_i2g_zero_init_output(codec):
    m = I2GModel(I2GConfig(**SMALL), codec)
    out = m.predict_v(torch.randn(2, 4, 4, 4), torch.randn(2, 4, 4, 4), 500)
    assert torch.equal(out, torch.zeros_like(out))


def test_i2g_training_determinism_and_loss(codec):
    cfg = I2GConfig(steps=4, batch_size=2, **SMALL)
    rgb, geo = _maps(4), _maps(4, seed=1)
    a, hist = train_i2g(rgb, geo, codec, cfg)
    b, _ = train_i2g(rgb, geo, codec, cfg)
    assert _states_equal(a.net, b.net)
    assert len(hist) == 4 and all(np.isfinite(h["loss"]) for h in hist)
    with pytest.raises(ValidationError):
        train_i2g(rgb, geo[:2], codec, cfg)


def test_i2g_ensemble_contracts(codec):
    m = I2GModel(I2GConfig(**SMALL), codec)
    _randomize(m.net)
    rgb = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    mask = np.zeros((16, 16), bool)
    mask[3:13, 4:12] = True
    one = infer_i2g(m, rgb, mask, E=1, S=3, seed=2)
    assert one.values.shape == (16, 16)
    assert np.array_equal(one.values, one.members[0])
    same = infer_i2g(m, rgb, mask, E=8, S=3, seeds=[5] * 8)
    assert np.array_equal(same.values, same.members[3])
    again = infer_i2g(m, rgb, mask, E=1, S=3, seed=2)
    assert np.array_equal(one.values, again.values)
    assert (one.values[~mask] == 0).all() and (np.abs(one.values[mask]) <= 1.0).all()
    with pytest.raises(ValidationError):
        infer_i2g(m, rgb, mask, E=0, S=3)


def test_i2g_modality_guard(codec):
    m = I2GModel(I2GConfig(modality="depth", **SMALL), codec)
    with pytest.raises(ModalityError):
        infer_i2g(m, np.zeros((16, 16, 3)), np.ones((16, 16), bool), E=1, S=1, modality="normal")
    with pytest.raises(ModalityError):
        I2GConfig(modality="albedo")


def test_median_is_permutation_invariant():
    rng = np.random.default_rng(0)
    members = rng.normal(size=(5, 6, 6, 3))
    mask = np.ones((6, 6), bool)
    a = aggregate_members(members, mask, "normal").values
    b = aggregate_members(members[::-1], mask, "normal").values
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=-1), 1.0)


def test_i2g_checkpoint_round_trip(codec, tmp_path):
    m = I2GModel(I2GConfig(**SMALL), codec)
    _randomize(m.net)
    save_i2g(m, tmp_path / "i.safetensors", "codec.safetensors", "abc")
    again, header = load_i2g(tmp_path / "i.safetensors", codec)
    assert header["modality"] == "depth" and header["codec_hash"] == "abc"
    assert _states_equal(m.net, again.net)


# ------------------------------------------------------------------ V2G


def test_v2g_shapes_and_zero_init(codec):
    m = V2GModel(V2GConfig(frames=2, **SMALL), codec)
    x = torch.randn(1, 2, 4, 4, 4)
    out = m.forward(x, torch.randn(1, 4, 4, 4), torch.randn(1, 2, 4, 4, 4), 10)
    assert out.shape == x.shape and not out.any()
    with pytest.raises(ValidationError):
        m.forward(x, torch.randn(1, 4, 4, 4), torch.randn(1, 3, 4, 4, 4), 10)
    with pytest.raises(ValidationError):
        m.forward(x, None, torch.randn(1, 2, 4, 4, 4), 10)


def test_v2g_zero_parameters_zero_output(codec):
    m = V2GModel(V2GConfig(frames=2, **SMALL), codec)
    with torch.no_grad():
        for p in m.net.parameters():
            p.zero_()
    out = m.forward(torch.randn(1, 2, 4, 4, 4), torch.randn(1, 4, 4, 4), torch.randn(1, 2, 4, 4, 4), 7)
    assert not out.any()


def test_v2g_reference_sensitivity(codec):
    m = V2GModel(V2GConfig(frames=3, **SMALL), codec)
    _randomize(m.net)
    g = torch.Generator().manual_seed(0)
    x, ref, ctrl = (torch.randn(s, generator=g) for s in [(1, 3, 4, 4, 4), (1, 4, 4, 4), (1, 3, 4, 4, 4)])
    perm = ref.flatten()[torch.randperm(ref.numel(), generator=g)].reshape(ref.shape)
    with torch.no_grad():
        assert not torch.allclose(m.forward(x, ref, ctrl, 300), m.forward(x, perm, ctrl, 300))


def test_control_branch_zero_init(codec):
    m = V2GModel(V2GConfig(frames=3, **SMALL), codec)
    # randomize only the backbone output head; the control projections stay at zero
    with torch.no_grad():
        m.net.conv_out.weight.normal_(0, 0.1)
    x, ref, ctrl = torch.randn(1, 3, 4, 4, 4), torch.randn(1, 4, 4, 4), torch.randn(1, 3, 4, 4, 4)
    with torch.no_grad():
        assert torch.equal(m.forward(x, ref, ctrl, 50), m.forward(x, ref, None, 50))


def test_temporal_equivariance(codec):
    m = V2GModel(V2GConfig(frames=5, **SMALL), codec)
    _randomize(m.net)
    g = torch.Generator().manual_seed(1)
    frame = torch.randn(1, 1, 4, 4, 4, generator=g)
    ctrl = torch.randn(1, 1, 4, 4, 4, generator=g)
    with torch.no_grad():
        out = m.forward(frame.expand(1, 5, -1, -1, -1), torch.randn(1, 4, 4, 4, generator=g),
                        ctrl.expand(1, 5, -1, -1, -1), 400)
    assert (out - out[:, :1]).abs().max() <= 1e-5
    assert out.abs().max() > 0


def test_v2g_gradient_matches_finite_differences(codec):
    torch.manual_seed(2)
    m = V2GModel(V2GConfig(frames=2, **SMALL), codec)
    _randomize(m.net)
    net = m.net.double()
    sched = m.schedule
    g = torch.Generator().manual_seed(3)
    n0 = torch.randn(1, 2, 4, 2, 2, generator=g, dtype=torch.float64)  # 8x8 maps at downsample 4
    eps = torch.randn(n0.shape, generator=g, dtype=torch.float64)
    ref = n0[:, 0]
    ctrl = torch.randn(n0.shape, generator=g, dtype=torch.float64)
    t = torch.tensor([321])
    target = sched.v_from(n0, eps, t)
    n_t = sched.add_noise(n0, eps, t)

    def loss():
        return F.mse_loss(m.forward(n_t, ref, ctrl, t), target)

    net.zero_grad()
    loss().backward()
    params = list(net.parameters())
    rng = np.random.default_rng(0)
    h = 1e-6
    checked = 0
    for pi in rng.permutation(len(params)):
        p = params[pi]
        j = int(rng.integers(p.numel()))
        gval = p.grad.view(-1)[j].item()
        if abs(gval) < 1e-7:
            continue
        flat = p.data.view(-1)
        with torch.no_grad():
            flat[j] += h
            up = loss().item()
            flat[j] -= 2 * h
            down = loss().item()
            flat[j] += h
        fd = (up - down) / (2 * h)
        assert abs(gval - fd) <= 1e-3 * abs(fd), (pi, gval, fd)
        checked += 1
        if checked == 6:
            break
    assert checked == 6


def test_v2g_training_determinism_and_ratio(codec):
    clips = _clips(codec)
    cfg = V2GConfig(frames=3, steps=3, batch_size=1, **SMALL)
    a, hist = train_v2g(clips, codec, cfg)
    b, _ = train_v2g(clips, codec, cfg)
    assert _states_equal(a.net, b.net)
    _, depth_only = train_v2g(clips, codec, V2GConfig(frames=3, steps=6, batch_size=1, modality_ratio=1.0, **SMALL))
    assert {h["modality"] for h in depth_only} == {"depth"}
    with pytest.raises(ValidationError):
        V2GConfig(modality_ratio=1.5)
    with pytest.raises(ValidationError):
        V2GConfig(frames=1)


def test_naive_baseline_contract(codec):
    clips = _clips(codec)
    cfg = V2GConfig(frames=3, steps=2, batch_size=1, **SMALL)
    a, _ = train_naive_baseline(clips, codec, cfg)
    b, _ = train_naive_baseline(clips, codec, cfg)
    assert _states_equal(a.net, b.net)
    x = torch.randn(1, 3, 4, 4, 4)
    with pytest.raises(ValidationError):
        a.forward(x, torch.randn(1, 4, 4, 4), torch.randn(1, 3, 4, 4, 4), 5)
    assert a.forward(x, None, torch.randn(1, 3, 4, 4, 4), 5).shape == x.shape


def test_sample_clip_deterministic_and_checkpoint(codec, tmp_path):
    m = V2GModel(V2GConfig(frames=3, **SMALL), codec)
    _randomize(m.net)
    rgb = torch.randn(3, 4, 4, 4)
    ref = torch.randn(4, 4, 4)
    a = sample_clip(m, rgb, ref, seed=9, steps=4)
    assert torch.equal(a, sample_clip(m, rgb, ref, seed=9, steps=4))
    save_v2g(m, tmp_path / "v.safetensors", "codec.safetensors", "h")
    again, header = load_v2g(tmp_path / "v.safetensors", codec)
    assert isinstance(again, V2GModel) and header["frames"] == 3
    assert torch.equal(a, sample_clip(again, rgb, ref, seed=9, steps=4))
    naive = NaiveModel(V2GConfig(frames=3, **SMALL), codec, "normal")
    save_v2g(naive, tmp_path / "n.safetensors", "codec.safetensors", "h")
    back, header = load_v2g(tmp_path / "n.safetensors", codec)
    assert isinstance(back, NaiveModel) and back.modality == "normal"


def test_v2g_architecture_options(codec, tmp_path):
    with pytest.raises(ValidationError):
        V2GConfig(temporal="attention")
    with pytest.raises(ValidationError):
        V2GConfig(widths=(8, 16), control_widths=(4,))
    # without temporal mixing, frames are processed independently
    m = V2GModel(V2GConfig(frames=3, temporal="none", **SMALL), codec)
    _randomize(m.net)
    g = torch.Generator().manual_seed(2)
    x, ref, ctrl = torch.randn(1, 3, 4, 4, 4, generator=g), torch.randn(1, 4, 4, 4, generator=g), torch.randn(1, 3, 4, 4, 4, generator=g)
    perm = [2, 0, 1]
    with torch.no_grad():
        assert torch.allclose(m.forward(x, ref, ctrl, 80)[:, perm], m.forward(x[:, perm], ref, ctrl[:, perm], 80), atol=1e-6)
    # a narrower control encoder still injects at every level and starts at zero
    m = V2GModel(V2GConfig(frames=3, control_widths=(4, 6), **SMALL), codec)
    with torch.no_grad():
        m.net.conv_out.weight.normal_(0, 0.1)
        assert torch.equal(m.forward(x, ref, ctrl, 50), m.forward(x, ref, None, 50))
    _randomize(m.net)
    save_v2g(m, tmp_path / "c.safetensors", "codec.safetensors", "h")
    back, _ = load_v2g(tmp_path / "c.safetensors", codec)
    assert back.cfg.control_widths == (4, 6)
    with torch.no_grad():
        assert torch.equal(m.forward(x, ref, ctrl, 50), back.forward(x, ref, ctrl, 50))


def test_reference_run_v2g_loss_decreases():
    import json
    from pathlib import Path

    rec = json.loads((Path(__file__).parent / "data" / "reference_run.json").read_text())
    w = rec["v2g_loss_500"]
    assert len(w) >= 5 and all(b < a for a, b in zip(w, w[1:])), w
