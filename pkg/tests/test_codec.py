import numpy as np
import pytest
import torch
import torch.nn.functional as F

from geoman.codec import CodecConfig, LatentCodec, load_codec, maps_to_tensor, psnr, save_codec, train_codec
from geoman.errors import DivergenceError, ValidationError


def _maps(n=8, size=16, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size] / size
    out = []
    for _ in range(n):
        a, b, c = rng.uniform(-1, 1, 3)
        m = np.tanh(a * xx + b * yy + c * np.sin(6 * xx))
        out.append(np.stack([m, m * 0.5, -m], -1))
    return np.asarray(out, dtype=np.float32)


def test_shape_contract():
    codec = LatentCodec(CodecConfig())
    z = codec.encode(torch.zeros(1, 3, 64, 64))
    assert tuple(z.shape) == (1, 4, 16, 16)
    assert tuple(codec.decode(z).shape) == (1, 3, 64, 64)


def test_config_validation():
    with pytest.raises(ValidationError):
        CodecConfig(downsample=3)
    with pytest.raises(ValidationError):
        CodecConfig(latent_channels=0)
    with pytest.raises(ValidationError):
        CodecConfig(fg_weight=0.0)
    codec = LatentCodec(CodecConfig())
    with pytest.raises(ValidationError):
        codec.encode(torch.zeros(1, 3, 30, 30))
    with pytest.raises(ValidationError):
        codec.decode(torch.zeros(1, 3, 8, 8))


def test_foreground_weighting():
    x = maps_to_tensor(_maps(4, 16))
    x[:, :, :8] = -1.0  # top half is background
    fixed = torch.Generator().manual_seed(0)
    torch.manual_seed(0)
    plain = LatentCodec(CodecConfig(widths=(4, 8), kl_weight=0.0, fg_weight=1.0))
    weighted = LatentCodec(CodecConfig(widths=(4, 8), kl_weight=0.0, fg_weight=5.0))
    weighted.load_state_dict(plain.state_dict())
    total, recon = plain.loss(x, fixed)
    assert total.item() == pytest.approx(recon.item(), rel=1e-6)
    wt, wr = weighted.loss(x, torch.Generator().manual_seed(0))
    assert wr.item() == pytest.approx(recon.item(), rel=1e-6)
    with torch.no_grad():
        err = (plain.decoder(plain.moments(x)[0] + torch.exp(0.5 * plain.moments(x)[1])
                             * torch.randn(plain.moments(x)[0].shape, generator=torch.Generator().manual_seed(0))) - x) ** 2
    bg, fg = err[:, :, :8].mean(), err[:, :, 8:].mean()
    assert wt.item() == pytest.approx(((bg + 5 * fg) / 6).item(), rel=1e-5)


def test_zeros_bounded():
    codec = LatentCodec(CodecConfig())
    z = codec.encode(torch.zeros(2, 3, 16, 16))
    assert torch.isfinite(z).all()
    x = codec.decode(z)
    assert x.min() >= -1 and x.max() <= 1


def test_training_determinism_and_change():
    maps = _maps()
    cfg = CodecConfig(steps=3, batch_size=4)
    a, hist = train_codec(maps, cfg)
    b, _ = train_codec(maps, cfg)
    for (k, p), q in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(p, q), k
    assert all(np.isfinite(h["loss"]) for h in hist)
    # one step moves the parameters
    torch.manual_seed(0)
    init = LatentCodec(CodecConfig(steps=1))
    one, _ = train_codec(maps, CodecConfig(steps=1, batch_size=4))
    moved = [not torch.equal(p, q) for (k, p), q in zip(init.state_dict().items(), one.state_dict().values())
             if k != "latent_scale"]
    assert any(moved)


def test_training_rejects_bad_data():
    with pytest.raises(ValidationError):
        train_codec(np.zeros((0, 8, 8, 3)), CodecConfig(steps=1))
    with pytest.raises(ValidationError):
        train_codec(np.full((2, 8, 8, 3), 1.5), CodecConfig(steps=1))


def test_divergence_reports_step():
    with pytest.raises(DivergenceError) as exc:
        train_codec(_maps(), CodecConfig(steps=5, lr=1e30, batch_size=4))
    assert "step" in str(exc.value)


def test_gradient_matches_finite_differences():
    torch.manual_seed(3)
    codec = LatentCodec(CodecConfig(widths=(4, 8))).double()
    x = maps_to_tensor(_maps(2, 8)).double()

    def loss():
        mean, _ = codec.moments(x)
        return F.mse_loss(codec.decoder(mean), x)

    params = [p for p in codec.parameters() if p.requires_grad]
    codec.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    h = 1e-6
    for pi in rng.choice(len(params), 6, replace=False):
        p = params[pi]
        flat = p.data.view(-1)
        j = int(rng.integers(flat.numel()))
        g = p.grad.view(-1)[j].item()
        with torch.no_grad():
            flat[j] += h
            up = loss().item()
            flat[j] -= 2 * h
            down = loss().item()
            flat[j] += h
        fd = (up - down) / (2 * h)
        assert abs(g - fd) <= 1e-3 * max(abs(fd), 1e-8) + 1e-10


def test_lipschitz_sanity():
    codec, _ = train_codec(_maps(), CodecConfig(steps=5, batch_size=4))
    x = maps_to_tensor(_maps(4, 16, seed=5))
    eps = 1e-3
    d = torch.from_numpy(np.random.default_rng(1).choice([-eps, eps], size=x.shape).astype(np.float32))
    with torch.no_grad():
        z0, z1 = codec.encode(x), codec.encode(x + d)
    assert torch.isfinite(z1).all()
    rel = (z1 - z0).norm() / z0.norm()
    assert rel < 1e3 * eps


def test_psnr():
    x = np.zeros((4, 4))
    assert psnr(x, x) == float("inf")
    # mse 0.04 on a peak-to-peak range of 2: 10 log10(4 / 0.04) = 20 dB
    assert psnr(x, x + 0.2) == pytest.approx(20.0)


def test_checkpoint_round_trip(tmp_path):
    codec, _ = train_codec(_maps(), CodecConfig(steps=2, batch_size=4))
    save_codec(codec, tmp_path / "c.safetensors")
    again, header = load_codec(tmp_path / "c.safetensors")
    assert header["kind"] == "codec"
    x = maps_to_tensor(_maps(2))
    with torch.no_grad():
        assert torch.equal(codec.decode(codec.encode(x)), again.decode(again.encode(x)))
