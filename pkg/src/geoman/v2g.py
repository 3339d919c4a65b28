"""Reference-guided video-to-geometry denoiser, plus the naive all-frames baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import diffusion
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import LatentCodec
from .errors import DivergenceError, ValidationError
from .latents import ScheduleConfig, check_modality, encode_maps
from .nets import DenoiserUNet, cosine_decay


TEMPORAL_KINDS = ("conv1d", "none")


@dataclass
class V2GConfig:
    frames: int = 12
    widths: tuple = (24, 48, 48)
    # None: same as the denoiser widths
    control_widths: tuple | None = None
    # "conv1d": residual 1-D convolution over frames at every level; "none": frames are independent
    temporal: str = "conv1d"
    temb_dim: int = 64
    steps: int = 5000
    batch_size: int = 4
    lr: float = 5e-4
    seed: int = 0
    # probability that a batch trains the depth modality (1.0 = depth only, 0.0 = normal only)
    modality_ratio: float = 0.5
    sampler_steps: int = 100
    max_height: float = 2.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.control_widths is not None:
            self.control_widths = tuple(self.control_widths)
            if len(self.control_widths) != len(self.widths):
                raise ValidationError("control_widths needs one entry per denoiser level")
        if self.temporal not in TEMPORAL_KINDS:
            raise ValidationError(f"temporal mixing must be one of {TEMPORAL_KINDS}, got {self.temporal!r}")
        if isinstance(self.schedule, dict):
            self.schedule = ScheduleConfig(**self.schedule)
        if self.frames < 2:
            raise ValidationError(f"clip length must be >= 2, got {self.frames}")
        if not 0.0 <= self.modality_ratio <= 1.0:
            raise ValidationError(f"modality ratio must lie in [0, 1], got {self.modality_ratio}")


class V2GModel:
    """One parameter set for both modalities; the reference latent selects which."""

    kind = "v2g"
    uses_reference = True

    def __init__(self, cfg: V2GConfig, codec: LatentCodec, net: DenoiserUNet | None = None):
        self.cfg = cfg
        self.codec = codec
        self.schedule = cfg.schedule.build()
        C = codec.cfg.latent_channels
        if net is None:
            torch.manual_seed(cfg.seed)
            net = DenoiserUNet(2 * C, C, cfg.widths, cfg.temb_dim, temporal=cfg.temporal == "conv1d", control_ch=C,
                               control_widths=cfg.control_widths)
        self.net = net

    def forward(self, noisy: torch.Tensor, reference: torch.Tensor | None, control: torch.Tensor | None, t) -> torch.Tensor:
        return v2g_forward(self, noisy, reference, control, t)


class NaiveModel:
    """All frames in one pass from RGB latents concatenated on channels; no reference, no control."""

    kind = "naive"
    uses_reference = False

    def __init__(self, cfg: V2GConfig, codec: LatentCodec, modality: str = "depth", net: DenoiserUNet | None = None):
        self.cfg = cfg
        self.codec = codec
        self.modality = check_modality(modality)
        self.schedule = cfg.schedule.build()
        C = codec.cfg.latent_channels
        if net is None:
            torch.manual_seed(cfg.seed)
            net = DenoiserUNet(2 * C, C, cfg.widths, cfg.temb_dim, temporal=cfg.temporal == "conv1d")
        self.net = net

    def forward(self, noisy: torch.Tensor, reference: torch.Tensor | None, control: torch.Tensor, t) -> torch.Tensor:
        if reference is not None:
            raise ValidationError("the naive baseline takes no reference input")
        B, Fr = _check_clip(noisy, control)
        x = torch.cat([noisy, control], dim=2).reshape(B * Fr, -1, *noisy.shape[-2:])
        return self.net(x, _frame_t(t, B, Fr), frames=Fr).reshape(noisy.shape)


def _check_clip(noisy: torch.Tensor, control: torch.Tensor | None) -> tuple[int, int]:
    if noisy.ndim != 5:
        raise ValidationError(f"expected clip latents (B, F, C, h, w), got {tuple(noisy.shape)}")
    B, Fr = noisy.shape[:2]
    if control is not None and tuple(control.shape[:2]) != (B, Fr):
        raise ValidationError(f"frame count mismatch: latents have {Fr} frames, control has {control.shape[1]}")
    return B, Fr


def _frame_t(t, B: int, Fr: int) -> torch.Tensor:
    t = torch.as_tensor(t).reshape(-1)
    if t.numel() == 1:
        t = t.expand(B)
    return t.repeat_interleave(Fr)


def v2g_forward(model: V2GModel, noisy: torch.Tensor, reference: torch.Tensor, control: torch.Tensor | None, t) -> torch.Tensor:
    """v-prediction for a clip: noisy (B, F, C, h, w), reference (B, C, h, w), control RGB latents (B, F, C, h, w)."""
    B, Fr = _check_clip(noisy, control)
    if reference is None or reference.shape != (B,) + tuple(noisy.shape[2:]):
        raise ValidationError("V2G needs a (B, C, h, w) reference latent")
    ref = reference[:, None].expand(-1, Fr, -1, -1, -1)
    x = torch.cat([noisy, ref], dim=2).reshape(B * Fr, -1, *noisy.shape[-2:])
    ctrl = None if control is None else control.reshape(B * Fr, *control.shape[2:])
    return model.net(x, _frame_t(t, B, Fr), control=ctrl, frames=Fr).reshape(noisy.shape)


@dataclass
class ClipLatents:
    rgb: torch.Tensor  # (F, C, h, w)
    geometry: dict  # modality -> (F, C, h, w)


def prepare_clips(codec: LatentCodec, rgb_maps: list[np.ndarray], geo_maps: dict[str, list[np.ndarray]]) -> list[ClipLatents]:
    """Encode every training sequence once; geo_maps maps modality -> per-sequence (F, H, W, 3) maps."""
    clips = []
    for i, rgb in enumerate(rgb_maps):
        clips.append(ClipLatents(encode_maps(codec, rgb), {m: encode_maps(codec, maps[i]) for m, maps in geo_maps.items()}))
    return clips


def _batch(clips: list[ClipLatents], cfg: V2GConfig, rng: np.random.Generator, modality: str):
    rgb, geo = [], []
    for _ in range(cfg.batch_size):
        c = clips[int(rng.integers(len(clips)))]
        n = c.rgb.shape[0]
        if n < cfg.frames:
            raise ValidationError(f"training clip has {n} frames, need {cfg.frames}")
        s = int(rng.integers(0, n - cfg.frames + 1))
        rgb.append(c.rgb[s : s + cfg.frames])
        geo.append(c.geometry[modality][s : s + cfg.frames])
    return torch.stack(rgb), torch.stack(geo)


def _train(model, clips: list[ClipLatents], cfg: V2GConfig, modality_fn, log_every: int):
    sched = model.schedule
    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.lr)
    lr_sched = cosine_decay(opt, cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 11)
    history = []
    model.net.train()
    for step in range(cfg.steps):
        modality = modality_fn(rng)
        rgb, n0 = _batch(clips, cfg, rng, modality)
        t = torch.randint(1, sched.T + 1, (cfg.batch_size,), generator=gen)
        eps = torch.randn(n0.shape, generator=gen)
        n_t = sched.add_noise(n0, eps, t)
        target = sched.v_from(n0, eps, t)
        reference = n0[:, 0] if model.uses_reference else None
        loss = F.mse_loss(model.forward(n_t, reference, rgb, t), target)
        if not torch.isfinite(loss):
            raise DivergenceError(f"{model.kind} loss is not finite", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        lr_sched.step()
        if step % log_every == 0 or step == cfg.steps - 1:
            history.append({"step": step, "loss": loss.item(), "modality": modality})
    model.net.eval()
    return model, history


def train_v2g(clips: list[ClipLatents], codec: LatentCodec, cfg: V2GConfig, log_every: int = 1):
    model = V2GModel(cfg, codec)
    ratio = cfg.modality_ratio

    def pick(rng):
        # always draw so the stream of random numbers does not depend on the ratio
        return "depth" if rng.random() < ratio else "normal"

    return _train(model, clips, cfg, pick, log_every)


def train_naive_baseline(clips: list[ClipLatents], codec: LatentCodec, cfg: V2GConfig, modality: str = "depth",
                         log_every: int = 1):
    model = NaiveModel(cfg, codec, modality)

    def pick(rng):
        rng.random()
        return modality

    return _train(model, clips, cfg, pick, log_every)


@torch.no_grad()
def sample_clip(model, rgb_latents: torch.Tensor, reference: torch.Tensor | None, seed: int,
                steps: int | None = None, mode: str = "ddim") -> torch.Tensor:
    """Denoise one clip: rgb_latents (F, C, h, w), reference (C, h, w) or None -> (F, C, h, w)."""
    steps = model.cfg.sampler_steps if steps is None else steps
    control = rgb_latents[None]
    ref = None if reference is None else reference[None]

    def denoiser(x_t, cond, t):
        return model.forward(x_t, ref, control, t)

    out = diffusion.sample(denoiser, None, control.shape, model.schedule, steps, seed=seed, mode=mode)
    return out[0]


def save_v2g(model, path, codec_path: str, codec_hash: str) -> str:
    cfg = asdict(model.cfg)
    cfg["widths"] = list(model.cfg.widths)
    header = {"config": cfg, "schedule": asdict(model.cfg.schedule), "frames": model.cfg.frames,
              "codec_path": str(codec_path), "codec_hash": codec_hash}
    if isinstance(model, NaiveModel):
        header["modality"] = model.modality
    return save_checkpoint(path, model.kind, model.net.state_dict(), header)


def load_v2g(path, codec: LatentCodec):
    state, header = load_checkpoint(path)
    cfg = V2GConfig(**header["config"])
    if header["kind"] == "v2g":
        model = V2GModel(cfg, codec)
    elif header["kind"] == "naive":
        model = NaiveModel(cfg, codec, header["modality"])
    else:
        raise ValidationError(f"{path} is a {header['kind']!r} checkpoint, not a video model")
    model.net.load_state_dict(state)
    model.net.eval()
    return model, header
