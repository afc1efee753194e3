"""Training loop, checkpointing and inference."""
from __future__ import annotations

import csv
import enum
import io
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Adam, Tensor, backward, load_checkpoint, lr_linear_decay, save_checkpoint
from ..autodiff.optim import AdamState
from ..core import (
    AcqParams, ConfigError, DceSeries, FrameCountMismatch, NonFiniteLoss, PkMap, PlasmaCurve, TkModel,
)
from ..networks import (
    CP_SCALE, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, clamp_inference_output, prepare_input,
)
from .data import PatchSampler, TrainingSet, UnpairedBatch, _corner_candidates
from .losses import cycle_terms, lsgan_disc_loss, lsgan_gen_loss, physics_loss, supervised_loss
from .physics_ops import tk_signal

CHECKPOINT_FORMAT = 1
LOG_FIELDS = (
    "step", "epoch", "lr", "total", "cycle", "cycle_pk", "cycle_signal", "cycle_cp",
    "gen_adv", "disc", "supervised", "physics",
)


class TrainMode(str, enum.Enum):
    CYCLEGAN = "cyclegan"
    SUPERVISED = "supervised"
    SUPERVISED_PHYSICS = "supervised-physics"

    @classmethod
    def parse(cls, value) -> "TrainMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise ConfigError(f"unknown training mode {value!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = TrainMode.CYCLEGAN
    model: TkModel = TkModel.ETOFTS
    gamma: float = 10.0
    rho: float = 1.0
    alpha: float = 10.0
    beta: float = 10.0
    batch_size: int = 32
    patch: int = 48
    epochs: int = 200
    steps_per_epoch: int = 100
    lr: float = 1e-5
    decay_start: int | None = None
    seed: int = 0
    base_channels: int = 64
    cp_hidden_units: int = 256
    disc_filters: int = 32
    log_interval: int = 1
    checkpoint_every: int = 0  # epochs; 0 keeps only the final checkpoint

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainMode.parse(self.mode))
        object.__setattr__(self, "model", TkModel.parse(self.model))
        for name in ("gamma", "rho", "alpha", "beta", "lr"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number")
        for name in ("batch_size", "steps_per_epoch", "base_channels", "cp_hidden_units", "disc_filters", "log_interval"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.epochs < 0 or self.checkpoint_every < 0:
            raise ConfigError("epochs and checkpoint_every must be >= 0")
        if self.patch < max(17, DiscriminatorSpec(1).min_size):
            raise ConfigError(f"patch {self.patch} below the network minimum")
        if not 0 <= self.seed < 2**63:
            raise ConfigError("seed must be a non-negative 63-bit integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["model"] = self.model.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@contextmanager
def frozen(module):
    """Stop gradient accumulation into ``module``'s parameters for the block."""
    params = module.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


@dataclass
class TrainState:
    cfg: TrainConfig
    acq: AcqParams
    gen: Generator
    disc: Discriminator | None
    opt_g: Adam
    opt_d: Adam | None
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    log: list = field(default_factory=list)


def build_state(cfg: TrainConfig, acq: AcqParams) -> TrainState:
    g_seq, d_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    gspec = GeneratorSpec.for_model(cfg.model, acq.n_frames, base_channels=cfg.base_channels,
                                    cp_hidden_units=cfg.cp_hidden_units)
    gen = Generator(gspec, np.random.default_rng(g_seq))
    disc = opt_d = None
    if cfg.mode is TrainMode.CYCLEGAN:
        disc = Discriminator(DiscriminatorSpec(cfg.model.n_params, cfg.disc_filters), np.random.default_rng(d_seq))
        opt_d = Adam(disc.parameters(), lr=cfg.lr)
    return TrainState(cfg, acq, gen, disc, Adam(gen.parameters(), lr=cfg.lr), opt_d, np.random.default_rng(data_seq))


def _value(t: Tensor) -> float:
    return float(t.data)


def cyclegan_step(state: TrainState, batch: UnpairedBatch) -> dict:
    """One generator update followed by one discriminator update."""
    cfg, acq, gen, disc = state.cfg, state.acq, state.gen, state.disc
    nb = acq.bolus_arrival_frame
    s, p, cp = Tensor(batch.s), Tensor(batch.p), Tensor(batch.cp)
    with frozen(disc):
        fake_p, fake_cp = gen(prepare_input(batch.s, nb))
        s_cycle = tk_signal(fake_p, fake_cp, batch.s0, batch.t1, acq, cfg.model)
        s_from_p = tk_signal(p, cp, batch.s0, batch.t1, acq, cfg.model)
        p_cycle, cp_cycle = gen(prepare_input(s_from_p.data, nb))
        terms = cycle_terms(p, p_cycle, s, s_cycle, cp, cp_cycle, cfg.rho)
        adv = lsgan_gen_loss(disc(fake_p))
        total = terms.total * cfg.gamma + adv
        row = {
            "total": _value(total), "cycle": _value(terms.total), "cycle_pk": _value(terms.pk),
            "cycle_signal": _value(terms.signal), "cycle_cp": _value(terms.cp), "gen_adv": _value(adv),
        }
        if not math.isfinite(row["total"]):
            raise NonFiniteLoss(state.step, "generator total")
        gen.zero_grad()
        backward(total)
        state.opt_g.step()
    with frozen(gen):
        d_loss = lsgan_disc_loss(disc(p), disc(Tensor(fake_p.data)))
        row["disc"] = _value(d_loss)
        if not math.isfinite(row["disc"]):
            raise NonFiniteLoss(state.step, "discriminator")
        disc.zero_grad()
        backward(d_loss)
        state.opt_d.step()
    return row


def supervised_step(state: TrainState, batch: UnpairedBatch) -> dict:
    cfg = state.cfg
    pred, _ = state.gen(prepare_input(batch.s, state.acq.bolus_arrival_frame))
    sup = supervised_loss(pred, Tensor(batch.s_labels), cfg.alpha)
    total = sup
    row = {"supervised": _value(sup)}
    if cfg.mode is TrainMode.SUPERVISED_PHYSICS:
        recon = tk_signal(pred, Tensor(batch.s_cp), batch.s0, batch.t1, state.acq, cfg.model)
        phys = physics_loss(Tensor(batch.s), recon, cfg.beta)
        row["physics"] = _value(phys)
        total = total + phys
    row["total"] = _value(total)
    if not math.isfinite(row["total"]):
        raise NonFiniteLoss(state.step, "supervised total")
    state.gen.zero_grad()
    backward(total)
    state.opt_g.step()
    return row


def train(cfg: TrainConfig, dataset: TrainingSet, out_dir=None, state: TrainState | None = None,
          stop_after_epochs: int | None = None) -> TrainState:
    """Run (or continue) training; writes ``loss.csv`` and checkpoints to ``out_dir`` when given.

    ``stop_after_epochs`` ends the run early at an epoch boundary, as an interrupted job would.
    """
    if dataset.model is not cfg.model:
        raise ConfigError(f"dataset model {dataset.model.value} != config model {cfg.model.value}")
    if not dataset.has_labels:
        need = "PK maps for the P pool" if cfg.mode is TrainMode.CYCLEGAN else "PK label volumes"
        raise ConfigError(f"mode {cfg.mode.value} needs {need}")
    state = state or build_state(cfg, dataset.acq)
    sampler = PatchSampler(dataset, cfg.patch)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if state.epoch == 0:
            save_state(state, out / "checkpoint_epoch0000.ckpt")
    step_fn = cyclegan_step if cfg.mode is TrainMode.CYCLEGAN else supervised_step
    end = cfg.epochs if stop_after_epochs is None else min(cfg.epochs, state.epoch + stop_after_epochs)
    while state.epoch < end:
        lr = lr_linear_decay(cfg.lr, state.epoch, cfg.epochs, cfg.decay_start)
        state.opt_g.lr = lr
        if state.opt_d is not None:
            state.opt_d.lr = lr
        for _ in range(cfg.steps_per_epoch):
            batch = sampler.sample(cfg.batch_size, state.rng)
            row = step_fn(state, batch)
            state.step += 1
            if state.step % cfg.log_interval == 0:
                full = {k: "" for k in LOG_FIELDS}
                full.update({k: repr(v) for k, v in row.items()})
                full.update(step=state.step, epoch=state.epoch + 1, lr=repr(lr))
                state.log.append(full)
        state.epoch += 1
        if out is not None:
            write_loss_csv(state.log, out / "loss.csv")
            if cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                save_state(state, out / f"checkpoint_epoch{state.epoch:04d}.ckpt")
    if out is not None:
        write_loss_csv(state.log, out / "loss.csv")
        save_state(state, out / "checkpoint_latest.ckpt")
    return state


def epoch_means(log: list, column: str = "total") -> list[float]:
    """Average of ``column`` per epoch, in epoch order."""
    sums: dict[int, list] = {}
    for row in log:
        sums.setdefault(int(row["epoch"]), []).append(float(row[column]))
    return [float(np.mean(sums[e])) for e in sorted(sums)]


def loss_csv_text(log: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(log)
    return buf.getvalue()


def write_loss_csv(log: list, path) -> None:
    Path(path).write_text(loss_csv_text(log))


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# checkpoints -------------------------------------------------------------------

def _adam_arrays(prefix, opt: Adam, arrays: dict) -> dict:
    st = opt.state
    for i, (m, v) in enumerate(zip(st.first_moment, st.second_moment)):
        arrays[f"{prefix}/m/{i}"] = m
        arrays[f"{prefix}/v/{i}"] = v
    return {"step_count": st.step_count, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
            "n": len(st.first_moment)}


def _restore_adam(meta: dict, prefix, arrays: dict, params) -> Adam:
    opt = Adam(params, lr=meta["lr"], betas=(meta["beta1"], meta["beta2"]), eps=meta["eps"])
    opt.state = AdamState(
        lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], step_count=meta["step_count"],
        first_moment=[arrays[f"{prefix}/m/{i}"] for i in range(meta["n"])],
        second_moment=[arrays[f"{prefix}/v/{i}"] for i in range(meta["n"])],
    )
    return opt


def save_state(state: TrainState, path) -> None:
    arrays = {f"G/{k}": v for k, v in state.gen.state_dict().items()}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "train_config": state.cfg.to_dict(),
        "acq": state.acq.to_dict(),
        "generator": state.gen.spec.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "log": state.log,
        "ops": ["conv2d", "relu", "concat", "global_avg_pool", "linear"],
    }
    manifest["adam_g"] = _adam_arrays("optG", state.opt_g, arrays)
    if state.disc is not None:
        manifest["discriminator"] = state.disc.spec.to_dict()
        arrays.update({f"D/{k}": v for k, v in state.disc.state_dict().items()})
        manifest["adam_d"] = _adam_arrays("optD", state.opt_d, arrays)
    save_checkpoint(path, manifest, arrays)


def load_state(path) -> TrainState:
    manifest, arrays = load_checkpoint(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unsupported checkpoint format {manifest.get('format')}")
    cfg = TrainConfig.from_dict(manifest["train_config"])
    acq = AcqParams.from_dict(manifest["acq"])
    gen = Generator(GeneratorSpec.from_dict(manifest["generator"]))
    gen.load_state_dict({k[2:]: v for k, v in arrays.items() if k.startswith("G/")})
    opt_g = _restore_adam(manifest["adam_g"], "optG", arrays, gen.parameters())
    disc = opt_d = None
    if "discriminator" in manifest:
        disc = Discriminator(DiscriminatorSpec.from_dict(manifest["discriminator"]))
        disc.load_state_dict({k[2:]: v for k, v in arrays.items() if k.startswith("D/")})
        opt_d = _restore_adam(manifest["adam_d"], "optD", arrays, disc.parameters())
    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng"]
    return TrainState(cfg, acq, gen, disc, opt_g, opt_d, rng, manifest["epoch"], manifest["step"], manifest["log"])


# inference -----------------------------------------------------------------------

@dataclass(frozen=True)
class Inference:
    pk: PkMap
    cp: PlasmaCurve


def infer(model, series: DceSeries, mask=None, patch: int | None = None) -> Inference:
    """PK maps from one full-image generator pass; C_p averaged over in-mask patches.

    ``model`` is a checkpoint path, a TrainState or a Generator. Outside the
    mask the PK maps are set to 0.
    """
    if isinstance(model, (str, Path)):
        model = load_state(model)
    if isinstance(model, TrainState):
        patch = patch or model.cfg.patch
        gen = model.gen
    else:
        gen = model
    spec = gen.spec
    if series.n_frames != spec.in_channels:
        raise FrameCountMismatch(f"checkpoint expects {spec.in_channels} frames, series has {series.n_frames}")
    data = prepare_input(series.data, series.acq.bolus_arrival_frame)
    h, w = series.shape
    mask = np.ones((h, w), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (h, w):
        raise FrameCountMismatch(f"mask {mask.shape} does not match series {(h, w)}")
    pk_raw, cp_full = gen(data[None])
    stack = clamp_inference_output(pk_raw.data[0], spec.model) * mask
    patch = min(patch or min(h, w), h, w)
    corners = _corner_candidates(mask, patch) if patch >= spec.min_size else np.zeros((0, 2), int)
    if len(corners):
        stride = max(1, patch // 4)
        keep = corners[(corners[:, 0] % stride == 0) & (corners[:, 1] % stride == 0)]
        corners = keep if len(keep) else corners[:1]
        crops = np.stack([data[:, y:y + patch, x:x + patch] for y, x in corners])
        cp_scaled = np.concatenate([gen(crops[i:i + 16])[1].data for i in range(0, len(crops), 16)]).mean(axis=0)
    else:
        cp_scaled = cp_full.data[0]
    cp = np.maximum(cp_scaled.astype(np.float64) / CP_SCALE, 0.0)
    return Inference(PkMap.from_stack(spec.model, stack), PlasmaCurve(cp, series.acq.time_seconds))


__all__ = [
    "TrainMode", "TrainConfig", "TrainState", "build_state", "train", "infer", "Inference",
    "save_state", "load_state", "epoch_means", "read_loss_csv", "loss_csv_text",
]
