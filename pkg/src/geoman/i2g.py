"""Image-to-geometry latent diffusion: first-frame depth or normals from RGB."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import diffusion
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import LatentCodec
from .errors import DivergenceError, ModalityError, ValidationError
from .latents import ScheduleConfig, check_modality, decode_latents, encode_maps, maps_to_geometry, rgb_to_maps
from .nets import DenoiserUNet, cosine_decay

log = logging.getLogger(__name__)


@dataclass
class I2GConfig:
    modality: str = "depth"
    widths: tuple = (24, 48, 48)
    temb_dim: int = 64
    steps: int = 6000
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    ensemble: int = 8
    sampler_steps: int = 100
    max_height: float = 2.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        check_modality(self.modality)
        self.widths = tuple(self.widths)
        if isinstance(self.schedule, dict):
            self.schedule = ScheduleConfig(**self.schedule)
        if self.ensemble < 1:
            raise ValidationError(f"ensemble size must be >= 1, got {self.ensemble}")


class I2GModel:
    def __init__(self, cfg: I2GConfig, codec: LatentCodec, net: DenoiserUNet | None = None):
        self.cfg = cfg
        self.codec = codec
        self.schedule = cfg.schedule.build()
        C = codec.cfg.latent_channels
        if net is None:
            torch.manual_seed(cfg.seed)
            net = DenoiserUNet(2 * C, C, cfg.widths, cfg.temb_dim)
        self.net = net
        self._modality = cfg.modality

    @property
    def modality(self) -> str:
        return self._modality

    def predict_v(self, x_t: torch.Tensor, rgb_latent: torch.Tensor, t) -> torch.Tensor:
        return self.net(torch.cat([x_t, rgb_latent], dim=1), t)


@dataclass
class I2GResult:
    values: np.ndarray  # (H, W) root-relative depth or (H, W, 3) unit normals
    uncertainty: np.ndarray  # (H, W) inter-sample standard deviation
    mask: np.ndarray
    modality: str
    members: np.ndarray  # decoded geometry of every ensemble member


def train_i2g(rgb_maps: np.ndarray, geo_maps: np.ndarray, codec: LatentCodec, cfg: I2GConfig,
              log_every: int = 1) -> tuple[I2GModel, list[dict]]:
    """Train on paired (N, H, W, 3) RGB and encoded-geometry maps, both in [-1, 1]."""
    if len(rgb_maps) == 0 or len(rgb_maps) != len(geo_maps):
        raise ValidationError("I2G training needs equally many non-empty RGB and geometry maps")
    x_all = encode_maps(codec, rgb_maps)
    d_all = encode_maps(codec, geo_maps)
    model = I2GModel(cfg, codec)
    sched = model.schedule
    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.lr)
    lr_sched = cosine_decay(opt, cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 7)
    history = []
    model.net.train()
    for step in range(cfg.steps):
        idx = torch.from_numpy(rng.integers(0, len(x_all), size=min(cfg.batch_size, len(x_all))))
        d0, x = d_all[idx], x_all[idx]
        t = torch.randint(1, sched.T + 1, (len(idx),), generator=gen)
        eps = torch.randn(d0.shape, generator=gen)
        d_t = sched.add_noise(d0, eps, t)
        target = sched.v_from(d0, eps, t)
        loss = F.mse_loss(model.predict_v(d_t, x, t), target)
        if not torch.isfinite(loss):
            raise DivergenceError("I2G loss is not finite", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        lr_sched.step()
        if step % log_every == 0 or step == cfg.steps - 1:
            history.append({"step": step, "loss": loss.item()})
    model.net.eval()
    return model, history


def _denoiser(model: I2GModel, x: torch.Tensor):
    def fn(x_t, cond, t):
        return model.predict_v(x_t, cond, t)

    return fn


@torch.no_grad()
def sample_latents(model: I2GModel, rgb_latent: torch.Tensor, seeds: list[int], steps: int, mode: str = "ddim") -> torch.Tensor:
    """One latent per seed for a single (1, C, h, w) RGB latent; member i starts from N(0, I) seeded by seeds[i]."""
    shape = tuple(rgb_latent.shape[1:])
    if mode == "ddim":
        init = torch.stack([torch.randn(shape, generator=torch.Generator().manual_seed(int(s))) for s in seeds])
        cond = rgb_latent.expand(len(seeds), *shape)
        return diffusion.sample(_denoiser(model, cond), cond, init.shape, model.schedule, steps, seed=0,
                                mode="ddim", x_init=init)
    outs = [diffusion.sample(_denoiser(model, rgb_latent), rgb_latent, (1,) + shape, model.schedule, steps,
                             seed=int(s), mode=mode) for s in seeds]
    return torch.cat(outs)


def ensemble_seeds(seed: int, E: int) -> list[int]:
    return [int(seed) * 1000 + i for i in range(E)]


@torch.no_grad()
def infer_i2g(model: I2GModel, rgb: np.ndarray, mask: np.ndarray, E: int | None = None, S: int | None = None,
              seed: int = 0, modality: str | None = None, mode: str = "ddim",
              seeds: list[int] | None = None) -> I2GResult:
    """Ensembled first-frame estimate; members are aggregated by per-pixel median."""
    if modality is not None and modality != model.modality:
        raise ModalityError(f"this I2G model predicts {model.modality!r}, not {modality!r}")
    E = model.cfg.ensemble if E is None else E
    S = model.cfg.sampler_steps if S is None else S
    if E < 1:
        raise ValidationError(f"ensemble size must be >= 1, got {E}")
    seeds = ensemble_seeds(seed, E) if seeds is None else list(seeds)
    if len(seeds) != E:
        raise ValidationError("need exactly one seed per ensemble member")
    mask = np.asarray(mask, dtype=bool)
    x = encode_maps(model.codec, rgb_to_maps(rgb)[None])
    z = sample_latents(model, x, seeds, S, mode)
    maps = decode_latents(model.codec, z)
    members = maps_to_geometry(maps, np.repeat(mask[None], E, axis=0), model.modality, model.cfg.max_height)
    return aggregate_members(members, mask, model.modality)


def aggregate_members(members: np.ndarray, mask: np.ndarray, modality: str) -> I2GResult:
    med = np.median(members, axis=0)
    if modality == "depth":
        spread = members.std(axis=0)
    else:
        norm = np.linalg.norm(med, axis=-1, keepdims=True)
        med = np.where(mask[..., None] & (norm > 0), med / np.where(norm > 0, norm, 1.0), 0.0)
        spread = members.std(axis=0).mean(axis=-1)
    return I2GResult(med, np.where(mask, spread, 0.0), mask, modality, members)


def save_i2g(model: I2GModel, path, codec_path: str, codec_hash: str) -> str:
    cfg = asdict(model.cfg)
    cfg["widths"] = list(model.cfg.widths)
    header = {"config": cfg, "modality": model.modality, "schedule": asdict(model.cfg.schedule),
              "codec_path": str(codec_path), "codec_hash": codec_hash}
    return save_checkpoint(path, "i2g", model.net.state_dict(), header)


def load_i2g(path, codec: LatentCodec) -> tuple[I2GModel, dict]:
    state, header = load_checkpoint(path, "i2g")
    cfg = I2GConfig(**header["config"])
    model = I2GModel(cfg, codec)
    model.net.load_state_dict(state)
    model.net.eval()
    return model, header
