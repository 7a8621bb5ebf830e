"""Training loops for supervised field fitting and the VAE variant, plus
checkpoint serialization.

A training step draws a batch of (object, input view, target view, light)
tuples, samples N masked pixels from each target view, runs the encoders and
field networks in one stacked pass, applies the photometric L1 loss (plus a
beta-weighted KL term in VAE mode), and takes one Adam step. Everything is
driven by a single seeded generator, so runs are bit-reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamConfig, Tensor, adam_step
from .dataset import Dataset, downsample_image
from .nets import ModelConfig, SurfaceLightFieldModel

CHECKPOINT_VERSION = 1
CHECKPOINT_SUFFIX = ".cslf"


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    kind: str = "two_step"
    conditioning: str = "none"
    generative: bool = False
    n_pixels: int = 2048
    batch_size: int = 16
    learning_rate: float = 1e-4
    beta: float = 1e-3
    steps: int = 1000
    seed: int = 0
    hidden_dim: int = 128
    feature_dim: int = 32
    s_dim: int = 128
    z_dim: int = 128
    image_size: int = 64
    encoder_channels: tuple = (16, 32, 64, 128)
    pointnet_hidden: int = 128
    pointnet_blocks: int = 4
    one_step_blocks: int = 10
    appearance_blocks: int = 6
    lighting_blocks: int = 5
    max_train_views: int | None = None      # 2-view ablation: set to 2
    max_lights_per_view: int | None = None  # ... with 1 light
    sampling: str = "shuffle"               # "shuffle": epoch permutation over
                                            # (object, view, light); "iid": draws
    light_as_input: bool = False            # see ModelConfig.light_as_input

    def __post_init__(self):
        if self.n_pixels < 1 or self.batch_size < 1:
            raise ValueError("n_pixels and batch_size must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.sampling not in ("shuffle", "iid"):
            raise ValueError("sampling must be 'shuffle' or 'iid'")
        self.encoder_channels = tuple(self.encoder_channels)

    def model_config(self, n_cloud_points: int) -> ModelConfig:
        return ModelConfig(
            kind=self.kind, conditioning=self.conditioning, generative=self.generative,
            light_as_input=self.light_as_input,
            hidden_dim=self.hidden_dim, one_step_blocks=self.one_step_blocks,
            appearance_blocks=self.appearance_blocks, lighting_blocks=self.lighting_blocks,
            feature_dim=self.feature_dim, s_dim=self.s_dim, z_dim=self.z_dim,
            image_size=self.image_size, encoder_channels=self.encoder_channels,
            n_points=n_cloud_points, pointnet_hidden=self.pointnet_hidden,
            pointnet_blocks=self.pointnet_blocks)

    def to_dict(self):
        d = self.__dict__.copy()
        d["encoder_channels"] = list(self.encoder_channels)
        return d


def photometric_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all rows and channels. With a fixed pixel
    count per batch element this equals the batch mean of per-view L1."""
    return ad.mean(ad.absolute(ad.sub(pred, target)))


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over all entries:
    0.5 * sum(mu^2 + exp(logvar) - logvar - 1)."""
    term = ad.add(ad.mul(mu, mu), ad.exp(logvar))
    term = ad.add_scalar(ad.sub(term, logvar), -1.0)
    return ad.scale(ad.sum_all(term), 0.5)


def latent_interpolate(z_a: np.ndarray, z_b: np.ndarray, t: float) -> np.ndarray:
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_a.shape != z_b.shape:
        raise ValueError(f"latent shapes {z_a.shape} and {z_b.shape} differ")
    return (1.0 - t) * z_a + t * z_b


class _CachedView:
    """A view held in memory: uint8 images, masked pixel indices, camera."""

    __slots__ = ("camera", "lights", "images_u8", "depth", "mask_vs", "mask_us")

    def __init__(self, view_data):
        self.camera = view_data.camera
        self.lights = view_data.lights
        self.images_u8 = [np.round(img * 255.0).astype(np.uint8) for img in view_data.images]
        self.depth = view_data.depth
        vs, us = np.nonzero(view_data.mask)
        self.mask_vs, self.mask_us = vs, us

    def sample(self, n, rng, light_index):
        if len(self.mask_us) < n:
            raise ValueError(f"view has {len(self.mask_us)} masked pixels, need {n}")
        sel = rng.choice(len(self.mask_us), size=n, replace=False)
        us, vs = self.mask_us[sel], self.mask_vs[sel]
        pts = self.camera.unproject(us.astype(np.float64), vs.astype(np.float64),
                                    self.depth[vs, us].astype(np.float64))
        v = self.camera.center[None, :] - pts
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        rgb = self.images_u8[light_index][vs, us].astype(np.float64) / 255.0
        return pts, v, rgb

    def image_float(self, light_index):
        return self.images_u8[light_index].astype(np.float64) / 255.0


@dataclass
class _Element:
    object_id: str
    p: np.ndarray
    v: np.ndarray
    rgb: np.ndarray
    light_vec: np.ndarray
    input_image: np.ndarray | None


class Trainer:
    def __init__(self, data: Dataset, config: TrainConfig):
        self.data = data
        self.config = config
        self.model = SurfaceLightFieldModel(
            config.model_config(data.config.n_cloud_points), seed=config.seed)
        self.adam = AdamConfig(learning_rate=config.learning_rate)
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed,
                                                                spawn_key=(1,)))
        self.object_ids = data.object_ids("train") or data.object_ids()
        self._views: dict = {}
        self._clouds: dict = {}
        self._deck: list = []
        self.step_count = 0
        self.history: list[float] = []

    # -- data access -------------------------------------------------------

    def _train_views(self, object_id):
        if object_id not in self._views:
            entries = self.data.view_entries(object_id, split="train")
            if self.config.max_train_views is not None:
                entries = entries[: self.config.max_train_views]
            self._views[object_id] = [
                _CachedView(self.data.load_view(object_id, e)) for e in entries]
        return self._views[object_id]

    def _cloud(self, object_id):
        if object_id not in self._clouds:
            self._clouds[object_id] = self.data.load_cloud(object_id)
        return self._clouds[object_id]

    def _n_lights(self, view):
        n = len(view.lights)
        if self.config.max_lights_per_view is not None:
            n = min(n, self.config.max_lights_per_view)
        return n

    def _encoder_image(self, cached: _CachedView, light_index):
        img = downsample_image(cached.image_float(light_index), self.config.image_size)
        return np.ascontiguousarray(img.transpose(2, 0, 1))

    def _next_triples(self, count):
        """(object, view index, light index) tuples for one batch. Shuffle
        mode deals from an epoch permutation of every training triple, so
        coverage stays even; iid mode draws independently."""
        if self.config.sampling == "iid":
            out = []
            for _ in range(count):
                object_id = self.object_ids[self.rng.integers(len(self.object_ids))]
                views = self._train_views(object_id)
                vi = int(self.rng.integers(len(views)))
                out.append((object_id, vi, int(self.rng.integers(self._n_lights(views[vi])))))
            return out
        out = []
        while len(out) < count:
            if not self._deck:
                self._deck = [(oid, vi, li)
                              for oid in self.object_ids
                              for vi, view in enumerate(self._train_views(oid))
                              for li in range(self._n_lights(view))]
                order = self.rng.permutation(len(self._deck))
                self._deck = [self._deck[i] for i in order]
            out.append(self._deck.pop())
        return out

    def _draw_batch(self) -> list[_Element]:
        cfg = self.config
        elements = []
        for object_id, vi, li in self._next_triples(cfg.batch_size):
            views = self._train_views(object_id)
            view = views[vi]
            p, v, rgb = view.sample(cfg.n_pixels, self.rng, li)
            input_image = None
            if self.model.config.uses_z:
                in_view = views[self.rng.integers(len(views))]
                in_li = int(self.rng.integers(self._n_lights(in_view)))
                input_image = self._encoder_image(in_view, in_li)
            elements.append(_Element(
                object_id=object_id, p=p, v=v, rgb=rgb,
                light_vec=view.lights[li].to_vec(self.model.config.light_radius),
                input_image=input_image))
        return elements

    # -- forward assembly ---------------------------------------------------

    def _geometry_rows(self, elements):
        """One encoder pass per distinct object; rows shared via the graph."""
        per_object = {}
        for e in elements:
            if e.object_id not in per_object:
                per_object[e.object_id] = self.model.geometry_encoder.apply(
                    Tensor(self._cloud(e.object_id)))
        return ad.concat_rows([per_object[e.object_id] for e in elements])

    def _image_rows(self, elements):
        return ad.concat_rows([
            self.model.image_encoder.apply(Tensor(e.input_image)) for e in elements])

    def _vae_rows(self, elements, s_rows_np):
        mus, logvars, zs = [], [], []
        for i, e in enumerate(elements):
            eps = self.rng.standard_normal(self.config.z_dim)
            mu, lv, z = self.model.vae_encoder.apply(
                Tensor(e.input_image), Tensor(s_rows_np[i][None, :]), eps)
            mus.append(mu)
            logvars.append(lv)
            zs.append(z)
        return ad.concat_rows(mus), ad.concat_rows(logvars), ad.concat_rows(zs)

    def _field_predictions(self, elements, z_rows, s_rows=None):
        """Stacked field evaluation; conditioning rows are per element."""
        model, cfg = self.model, self.config
        mc = model.config
        n = cfg.n_pixels
        P = np.concatenate([e.p for e in elements])
        V = np.concatenate([e.v for e in elements])
        lights_np = np.stack([e.light_vec for e in elements])
        # Light rows enter either at the first layer (repeated per pixel) or
        # as per-element conditioning, depending on the architecture.
        light_input = None
        light_cond_rows = None
        if mc.use_light:
            if mc.light_as_input:
                light_input = np.repeat(lights_np, n, axis=0)
            else:
                light_cond_rows = Tensor(lights_np)

        if s_rows is None and mc.uses_s:
            s_rows = self._geometry_rows(elements)

        def cond_from(parts):
            parts = [p for p in parts if p is not None]
            if not parts:
                return None
            return parts[0] if len(parts) == 1 else ad.concat(parts)

        def with_light(x):
            return x if light_input is None else np.concatenate([x, light_input], axis=1)

        if mc.kind == "one_step":
            cond = cond_from([light_cond_rows, s_rows, z_rows])
            pred = model.one_step_t(
                Tensor(with_light(np.concatenate([P, V], axis=1))), cond, n)
        else:
            app_cond = cond_from([s_rows, z_rows])
            feats = model.appearance_t(Tensor(P), app_cond, n)
            fv = ad.concat([feats, Tensor(with_light(V))])
            pred = model.lighting_t(fv, cond_from([light_cond_rows, s_rows]), n)
        target = Tensor(np.concatenate([e.rgb for e in elements]))
        return pred, target

    # -- steps ---------------------------------------------------------------

    def train_step(self) -> float:
        """One supervised step (photometric L1); returns the loss."""
        if self.model.config.generative:
            raise ValueError("generative model trains with train_step_vae")
        elements = self._draw_batch()
        self.model.store.zero_grad()
        z_rows = self._image_rows(elements) if self.model.config.uses_z else None
        pred, target = self._field_predictions(elements, z_rows)
        loss = photometric_l1(pred, target)
        ad.backward(loss)
        adam_step(self.model.store, self.adam)
        self.step_count += 1
        value = loss.item()
        self.history.append(value)
        return value

    def train_step_vae(self):
        """One VAE step: beta * KL + photometric L1. Returns (total, kl, recon)
        where kl is the batch-mean KL and recon the batch-mean L1."""
        if not self.model.config.generative:
            raise ValueError("train_step_vae needs a generative model")
        elements = self._draw_batch()
        self.model.store.zero_grad()

        # Geometry codes feed both the VAE encoder and the decoder fields.
        s_tensor = self._geometry_rows(elements)
        mu, logvar, z_rows = self._vae_rows(elements, s_tensor.data)

        pred, target = self._field_predictions(elements, z_rows, s_rows=s_tensor)
        recon = photometric_l1(pred, target)
        kl_sum = gaussian_kl(mu, logvar)
        b = float(len(elements))
        total = ad.add(recon, ad.scale(kl_sum, self.config.beta / b))
        ad.backward(total)
        adam_step(self.model.store, self.adam)
        self.step_count += 1
        value = total.item()
        self.history.append(value)
        return value, kl_sum.item() / b, recon.item()

    def run(self, steps=None, log_every=0, log=print):
        steps = self.config.steps if steps is None else steps
        step_fn = self.train_step_vae if self.model.config.generative else self.train_step
        for i in range(steps):
            out = step_fn()
            if log_every and (i + 1) % log_every == 0:
                value = out[0] if isinstance(out, tuple) else out
                log(f"step {self.step_count}: loss {value:.5f}")
        return self.history


# ---------------------------------------------------------------------------
# Checkpoints: u64 length-prefixed JSON header + float64 parameter blob
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: SurfaceLightFieldModel, meta: dict | None = None):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model": model.config.to_dict(),
        "init_seed": model.seed,
        "normalization": {"light_radius": model.config.light_radius},
        "params": [{"name": n, "shape": list(t.shape)} for n, t in model.store.items()],
        "meta": meta or {},
    }
    blob = b"".join(t.data.astype("<f8").tobytes() for _, t in model.store.items())
    header_bytes = (json.dumps(header) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; returns (model, header)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: too short for a header")
    (hlen,) = struct.unpack("<Q", raw[:8])
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header_bytes = raw[8:8 + hlen]
    if not header_bytes.endswith(b"\n"):
        raise CheckpointError(f"{path}: header is not newline-terminated")
    header = json.loads(header_bytes.decode("utf-8"))
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r} not supported (expected {CHECKPOINT_VERSION})")
    try:
        config = ModelConfig.from_dict(header["model"])
    except TypeError as e:
        raise CheckpointError(f"{path}: unknown architecture field ({e})") from e
    model = SurfaceLightFieldModel(config, seed=header.get("init_seed", 0))

    params = header["params"]
    names = [p["name"] for p in params]
    have = [n for n, _ in model.store.items()]
    if names != have:
        raise CheckpointError(f"{path}: parameter list does not match architecture")
    blob = raw[8 + hlen:]
    total = sum(int(np.prod(p["shape"])) for p in params)
    if len(blob) != total * 8:
        raise CheckpointError(
            f"{path}: blob holds {len(blob)} bytes, architecture needs {total * 8}")
    offset = 0
    for p in params:
        t = model.store[p["name"]]
        if list(t.shape) != p["shape"]:
            raise CheckpointError(f"{path}: shape mismatch for {p['name']}")
        count = t.size
        t.data[...] = np.frombuffer(blob, dtype="<f8", count=count,
                                    offset=offset).reshape(t.shape)
        offset += count * 8
    return model, header
