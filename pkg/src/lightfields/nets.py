"""The five networks of the surface light field engine.

Field networks (one-step color field, appearance field, lighting model) are
fully-connected residual nets with a hidden width of 128. Conditioning codes
are concatenated into a single vector, passed through one linear layer per
block, and added to that block's output. The geometry encoder is a residual
point network with intermediate max-pooling; the image and VAE encoders are
small strided conv nets trained from scratch.

All forward passes run batched over rows. Conditioning rows are per batch
element and repeated internally, so a caller evaluating N surface points per
element pays for one projection per element, not per point.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor

DEFAULT_LIGHT_RADIUS = 10.0


@dataclass
class LightConfig:
    """Point light: position in scene units, linear RGB color in [0, 1]."""

    position: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        if self.position.shape != (3,) or self.color.shape != (3,):
            raise ValueError("LightConfig expects 3-vectors for position and color")
        if not np.all(np.isfinite(self.position)):
            raise ValueError("light position must be finite")
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise ValueError("light color components must lie in [0, 1]")

    def to_vec(self, radius: float = DEFAULT_LIGHT_RADIUS) -> np.ndarray:
        """6-vector conditioning input; position normalized by the light
        hemisphere radius so all conditioning channels are O(1)."""
        return np.concatenate([self.position / radius, self.color])


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def _check_unit(name, v, tol=1e-6):
    norms = np.linalg.norm(np.atleast_2d(v), axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError(f"{name} must be unit-norm (got norm {norms.max():.6f})")


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, store: ParameterStore, name: str, rng, fan_in: int, fan_out: int,
                 zero_init: bool = False):
        w = np.zeros((fan_in, fan_out)) if zero_init else kaiming_uniform(rng, fan_in, fan_out)
        self.w = store.register(f"{name}.w", Tensor(w))
        self.b = store.register(f"{name}.b", Tensor(np.zeros(fan_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine(x, self.w, self.b)


@dataclass
class FCResBlockSpec:
    hidden_dim: int = 128
    conditioning_dim: int = 0

    def __post_init__(self):
        if self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if self.conditioning_dim < 0:
            raise ValueError("conditioning_dim must be non-negative")


class FCResBlock:
    """Pre-activation residual block with an optional conditioning branch:

        out = x + W2 relu(W1 relu(x) + b1) + b2  [+ Wc c + bc]
    """

    def __init__(self, store, name, rng, spec: FCResBlockSpec):
        h = spec.hidden_dim
        self.fc1 = Linear(store, f"{name}.fc1", rng, h, h)
        # Zero-initialized second layer: blocks start as the identity map,
        # which keeps activations O(1) at any depth. Kaiming everywhere makes
        # the pre-activation residual stack grow geometrically (~sqrt(2) per
        # block) and saturates the output sigmoid before training starts.
        self.fc2 = Linear(store, f"{name}.fc2", rng, h, h, zero_init=True)
        self.cond = None
        if spec.conditioning_dim > 0:
            self.cond = Linear(store, f"{name}.cond", rng, spec.conditioning_dim, h)

    def __call__(self, x: Tensor, cond: Tensor | None, rows_per_cond: int) -> Tensor:
        d = self.fc2(ad.relu(self.fc1(ad.relu(x))))
        out = ad.add(x, d)
        if self.cond is not None:
            proj = self.cond(cond)
            if rows_per_cond > 1:
                proj = ad.repeat_rows(proj, rows_per_cond)
            out = ad.add(out, proj)
        return out


class FieldNet:
    """Residual MLP from an input row to an output row, conditioned per block."""

    def __init__(self, store, name, rng, in_dim, out_dim, n_blocks,
                 hidden_dim=128, cond_dim=0, final="linear"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.cond_dim = cond_dim
        self.final = final
        spec = FCResBlockSpec(hidden_dim=hidden_dim, conditioning_dim=cond_dim)
        self.stem = Linear(store, f"{name}.stem", rng, in_dim, hidden_dim)
        self.blocks = [FCResBlock(store, f"{name}.block{i}", rng, spec)
                       for i in range(n_blocks)]
        self.head = Linear(store, f"{name}.head", rng, hidden_dim, out_dim)

    def apply(self, x: Tensor, cond: Tensor | None = None, rows_per_cond: int = 1) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ad.ShapeError(f"field net expects input width {self.in_dim}, got {x.shape}")
        if self.cond_dim > 0:
            if cond is None or cond.shape[-1] != self.cond_dim:
                got = None if cond is None else cond.shape
                raise ad.ShapeError(f"field net expects conditioning width {self.cond_dim}, got {got}")
            if cond.shape[0] * rows_per_cond != x.shape[0]:
                raise ad.ShapeError(
                    f"conditioning rows {cond.shape[0]} x {rows_per_cond} do not cover {x.shape[0]} inputs")
        h = self.stem(x)
        for block in self.blocks:
            h = block(h, cond if self.cond_dim > 0 else None, rows_per_cond)
        out = self.head(ad.relu(h))
        if self.final == "sigmoid":
            out = ad.sigmoid(out)
        return out


class GeometryEncoder:
    """Residual point network: per-point blocks with intermediate max-pool
    broadcast, then a global max-pool and a linear head."""

    def __init__(self, store, name, rng, n_points=2048, hidden_dim=128,
                 n_blocks=4, out_dim=128):
        self.n_points = n_points
        self.out_dim = out_dim
        spec = FCResBlockSpec(hidden_dim=hidden_dim)
        self.stem = Linear(store, f"{name}.stem", rng, 3, hidden_dim)
        self.blocks = [FCResBlock(store, f"{name}.block{i}", rng, spec)
                       for i in range(n_blocks)]
        # After every non-final block the pooled feature is concatenated back
        # onto each point and folded to hidden width again.
        self.folds = [Linear(store, f"{name}.fold{i}", rng, 2 * hidden_dim, hidden_dim)
                      for i in range(max(n_blocks - 1, 0))]
        self.head = Linear(store, f"{name}.head", rng, hidden_dim, out_dim)

    def apply(self, cloud: Tensor) -> Tensor:
        if cloud.shape != (self.n_points, 3):
            raise ValueError(
                f"geometry encoder expects a ({self.n_points}, 3) cloud, got {cloud.shape}")
        n = cloud.shape[0]
        h = self.stem(cloud)
        for i, block in enumerate(self.blocks):
            h = block(h, None, 1)
            if i < len(self.folds):
                pooled = ad.repeat_rows(ad.max_rows(h), n)
                h = self.folds[i](ad.concat([h, pooled]))
        return self.head(ad.relu(ad.max_rows(h)))  # (1, out_dim)

    def encode(self, cloud: np.ndarray) -> np.ndarray:
        cloud = np.asarray(cloud, dtype=np.float64)
        _check_finite("point cloud", cloud)
        with ad.no_grad():
            return self.apply(Tensor(cloud)).data[0]


class ConvEncoder:
    """Strided conv backbone: 4 stages of 3x3 stride-2 convs with ReLU,
    global average pool. Returns a (1, channels[-1]) feature row."""

    def __init__(self, store, name, rng, in_size=64, channels=(16, 32, 64, 128)):
        self.in_size = in_size
        self.channels = tuple(channels)
        self.convs = []
        c_prev = 3
        for i, c in enumerate(self.channels):
            w = store.register(f"{name}.conv{i}.w", Tensor(
                kaiming_uniform(rng, c_prev * 9, c).T.reshape(c, c_prev, 3, 3)))
            b = store.register(f"{name}.conv{i}.b", Tensor(np.zeros(c)))
            self.convs.append((w, b))
            c_prev = c

    def apply(self, image: Tensor) -> Tensor:
        h = image
        for w, b in self.convs:
            h = ad.relu(ad.conv2d(h, w, b, stride=2, pad=1))
        return ad.global_avg_pool(h)

    def check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (self.in_size, self.in_size, 3):
            raise ValueError(
                f"encoder expects a {self.in_size}x{self.in_size}x3 image, got {image.shape}")
        _check_finite("image", image)
        return np.ascontiguousarray(image.transpose(2, 0, 1))  # (3, H, W)


class ImageEncoder:
    def __init__(self, store, name, rng, in_size=64, z_dim=128, channels=(16, 32, 64, 128)):
        self.backbone = ConvEncoder(store, f"{name}.backbone", rng, in_size, channels)
        self.head = Linear(store, f"{name}.head", rng, channels[-1], z_dim)
        self.z_dim = z_dim

    def apply(self, image: Tensor) -> Tensor:
        return self.head(self.backbone.apply(image))  # (1, z_dim)

    def encode(self, image: np.ndarray) -> np.ndarray:
        chw = self.backbone.check_image(image)
        with ad.no_grad():
            return self.apply(Tensor(chw)).data[0]


class VaeEncoder:
    """Maps (image, geometry code) to the mean and log-variance of a
    Gaussian over the image code, and draws a reparameterized sample."""

    def __init__(self, store, name, rng, in_size=64, s_dim=128, z_dim=128,
                 hidden_dim=128, channels=(16, 32, 64, 128)):
        self.backbone = ConvEncoder(store, f"{name}.backbone", rng, in_size, channels)
        self.fuse = Linear(store, f"{name}.fuse", rng, channels[-1] + s_dim, hidden_dim)
        self.head = Linear(store, f"{name}.head", rng, hidden_dim, 2 * z_dim)
        self.z_dim = z_dim

    def apply(self, image: Tensor, s: Tensor, eps: np.ndarray):
        """Returns (mu, logvar, z) tensors; z = mu + exp(logvar/2) * eps."""
        feat = self.backbone.apply(image)
        h = ad.relu(self.fuse(ad.concat([feat, s])))
        stats = self.head(h)
        mu = ad.slice_last(stats, 0, self.z_dim)
        logvar = ad.slice_last(stats, self.z_dim, 2 * self.z_dim)
        sigma = ad.exp(ad.scale(logvar, 0.5))
        z = ad.add(mu, ad.mul(sigma, Tensor(eps[None, :])))
        return mu, logvar, z

    def encode(self, image: np.ndarray, s: np.ndarray, rng: np.random.Generator):
        chw = self.backbone.check_image(image)
        eps = rng.standard_normal(self.z_dim)
        with ad.no_grad():
            mu, logvar, z = self.apply(Tensor(chw), Tensor(np.asarray(s)[None, :]), eps)
        return mu.data[0], logvar.data[0], z.data[0]


# ---------------------------------------------------------------------------
# Model bundle
# ---------------------------------------------------------------------------

CONDITIONING_SETS = ("none", "s", "z", "s+z")


@dataclass
class ModelConfig:
    """Architecture hyperparameters for a full surface light field model."""

    kind: str = "two_step"                # "one_step" | "two_step"
    conditioning: str = "none"            # "none" | "s" | "z" | "s+z"
    use_light: bool = True                # False gives the fixed-illumination field
    light_as_input: bool = False          # light vector concatenated at the first
                                          # layer instead of per-block conditioning
    generative: bool = False              # z comes from the VAE encoder
    hidden_dim: int = 128
    one_step_blocks: int = 10
    appearance_blocks: int = 6
    lighting_blocks: int = 5
    feature_dim: int = 32
    s_dim: int = 128
    z_dim: int = 128
    image_size: int = 64
    encoder_channels: tuple = (16, 32, 64, 128)
    n_points: int = 2048
    pointnet_hidden: int = 128
    pointnet_blocks: int = 4
    light_radius: float = DEFAULT_LIGHT_RADIUS

    def __post_init__(self):
        if self.kind not in ("one_step", "two_step"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.conditioning not in CONDITIONING_SETS:
            raise ValueError(f"unknown conditioning set {self.conditioning!r}")
        if self.generative and self.conditioning != "s+z":
            raise ValueError("the generative variant requires s+z conditioning")
        self.encoder_channels = tuple(self.encoder_channels)

    @property
    def uses_s(self):
        return self.conditioning in ("s", "s+z")

    @property
    def uses_z(self):
        return self.conditioning in ("z", "s+z")

    @property
    def light_dim(self):
        return 6 if self.use_light else 0

    @property
    def light_input_dim(self):
        return 6 if (self.use_light and self.light_as_input) else 0

    @property
    def light_cond_dim(self):
        return 6 if (self.use_light and not self.light_as_input) else 0

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "encoder_channels": tuple(d["encoder_channels"])})


class SurfaceLightFieldModel:
    """A field network bundle plus whichever encoders its conditioning needs.

    Conditioning vector layouts (fixed order):
        one-step field: (l, s, z)      appearance field: (s, z)
        lighting model: (l, s)
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        c = config

        s_dim = c.s_dim if c.uses_s else 0
        z_dim = c.z_dim if c.uses_z else 0
        if c.kind == "one_step":
            self.one_step = FieldNet(self.store, "one_step", rng,
                                     6 + c.light_input_dim, 3,
                                     c.one_step_blocks, c.hidden_dim,
                                     c.light_cond_dim + s_dim + z_dim, final="sigmoid")
            self.appearance = None
            self.lighting = None
        else:
            self.one_step = None
            self.appearance = FieldNet(self.store, "appearance", rng, 3, c.feature_dim,
                                       c.appearance_blocks, c.hidden_dim,
                                       s_dim + z_dim, final="linear")
            self.lighting = FieldNet(self.store, "lighting", rng,
                                     c.feature_dim + 3 + c.light_input_dim, 3,
                                     c.lighting_blocks, c.hidden_dim,
                                     c.light_cond_dim + s_dim, final="sigmoid")

        self.geometry_encoder = None
        self.image_encoder = None
        self.vae_encoder = None
        if c.uses_s:
            self.geometry_encoder = GeometryEncoder(
                self.store, "geometry", rng, c.n_points, c.pointnet_hidden,
                c.pointnet_blocks, c.s_dim)
        if c.uses_z:
            if c.generative:
                self.vae_encoder = VaeEncoder(
                    self.store, "vae", rng, c.image_size, c.s_dim, c.z_dim,
                    c.hidden_dim, c.encoder_channels)
            else:
                self.image_encoder = ImageEncoder(
                    self.store, "image", rng, c.image_size, c.z_dim, c.encoder_channels)

    # -- conditioning vector assembly ------------------------------------

    def _code_rows(self, n_rows, s, z, include_z=True, include_light=None):
        """Stack (light, s, z) rows into the conditioning matrix."""
        parts = []
        if include_light is not None:
            parts.append(include_light)
        if self.config.uses_s:
            if s is None:
                raise ValueError("model is shape-conditioned but no geometry code given")
            parts.append(np.atleast_2d(np.asarray(s, dtype=np.float64)))
        if self.config.uses_z and include_z:
            if z is None:
                raise ValueError("model is image-conditioned but no image code given")
            parts.append(np.atleast_2d(np.asarray(z, dtype=np.float64)))
        if not parts:
            return None
        parts = [np.broadcast_to(p, (n_rows, p.shape[-1])) if p.shape[0] == 1 else p
                 for p in parts]
        return np.concatenate(parts, axis=-1)

    def light_rows(self, lights) -> np.ndarray | None:
        if not self.config.use_light:
            return None
        if isinstance(lights, LightConfig):
            lights = [lights]
        return np.stack([l.to_vec(self.config.light_radius) for l in lights])

    # -- batched field evaluation (tensor in, tensor out) -----------------

    def one_step_t(self, pv: Tensor, cond: Tensor | None, rows_per_cond=1) -> Tensor:
        return self.one_step.apply(pv, cond, rows_per_cond)

    def appearance_t(self, p: Tensor, cond: Tensor | None, rows_per_cond=1) -> Tensor:
        return self.appearance.apply(p, cond, rows_per_cond)

    def lighting_t(self, fv: Tensor, cond: Tensor | None, rows_per_cond=1) -> Tensor:
        return self.lighting.apply(fv, cond, rows_per_cond)

    # -- the public single/batch query operations -------------------------

    def _validate_pv(self, p, v):
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        _check_finite("p", p)
        _check_finite("v", v)
        _check_unit("v", v)
        return p, v

    def one_step_forward(self, p, v, light: LightConfig | None = None, s=None, z=None):
        """Color of the one-step field at (p, v) under a light and codes.

        Accepts a single query or row-stacked batches; returns (3,) or (n, 3)
        sRGB in [0, 1].
        """
        if self.one_step is None:
            raise ValueError("not a one-step model")
        p, v = self._validate_pv(p, v)
        single = p.shape[0] == 1
        lrows = None
        if self.config.use_light:
            if light is None:
                raise ValueError("model is light-conditioned but no light given")
            lrows = self.light_rows(light)
            if lrows.shape[0] == 1:
                lrows = np.broadcast_to(lrows, (p.shape[0], 6))
        x_parts = [p, v]
        if self.config.light_as_input and lrows is not None:
            x_parts.append(lrows)
            lrows = None
        cond = self._code_rows(p.shape[0], s, z, include_light=lrows)
        with ad.no_grad():
            out = self.one_step_t(Tensor(np.concatenate(x_parts, axis=-1)),
                                  None if cond is None else Tensor(cond)).data
        return out[0] if single else out

    def appearance_forward(self, p, s=None, z=None):
        """View- and light-independent appearance features at p."""
        if self.appearance is None:
            raise ValueError("not a two-step model")
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        _check_finite("p", p)
        single = p.shape[0] == 1
        cond = self._code_rows(p.shape[0], s, z)
        with ad.no_grad():
            out = self.appearance_t(Tensor(p), None if cond is None else Tensor(cond)).data
        return out[0] if single else out

    def lighting_forward(self, f, v, light: LightConfig | None = None, s=None):
        """Color from cached appearance features under a view and light."""
        if self.lighting is None:
            raise ValueError("not a two-step model")
        f = np.atleast_2d(np.asarray(f, dtype=np.float64))
        if f.shape[-1] != self.config.feature_dim:
            raise ValueError(
                f"appearance feature dim {f.shape[-1]} != {self.config.feature_dim}")
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        _check_finite("f", f)
        _check_unit("v", v)
        n = max(f.shape[0], v.shape[0])
        f = np.broadcast_to(f, (n, f.shape[-1]))
        v = np.broadcast_to(v, (n, 3))
        single = n == 1
        lrows = None
        if self.config.use_light:
            if light is None:
                raise ValueError("model is light-conditioned but no light given")
            lrows = self.light_rows(light)
            if lrows.shape[0] == 1:
                lrows = np.broadcast_to(lrows, (n, 6))
        x_parts = [f, v]
        if self.config.light_as_input and lrows is not None:
            x_parts.append(lrows)
            lrows = None
        cond = self._lighting_cond(n, lrows, s)
        with ad.no_grad():
            out = self.lighting_t(Tensor(np.concatenate(x_parts, axis=-1)),
                                  None if cond is None else Tensor(cond)).data
        return out[0] if single else out

    def _lighting_cond(self, n_rows, lrows, s):
        parts = []
        if lrows is not None:
            parts.append(lrows)
        if self.config.uses_s:
            if s is None:
                raise ValueError("model is shape-conditioned but no geometry code given")
            s = np.atleast_2d(np.asarray(s, dtype=np.float64))
            parts.append(np.broadcast_to(s, (n_rows, s.shape[-1])) if s.shape[0] == 1 else s)
        if not parts:
            return None
        return np.concatenate(parts, axis=-1)

    def pointnet_encode(self, cloud: np.ndarray) -> np.ndarray:
        if self.geometry_encoder is None:
            raise ValueError("model has no geometry encoder")
        return self.geometry_encoder.encode(cloud)

    def image_encode(self, image: np.ndarray) -> np.ndarray:
        if self.image_encoder is None:
            raise ValueError("model has no image encoder")
        return self.image_encoder.encode(image)

    def vae_encode(self, image: np.ndarray, s: np.ndarray, rng: np.random.Generator):
        if self.vae_encoder is None:
            raise ValueError("model has no VAE encoder")
        return self.vae_encoder.encode(image, s, rng)
