"""Synthetic paired features with planted category and context structure.

Per category k a latent ``z_k ~ N(0, I_m)``; per instance a context
``u ~ N(0, I_p)``. Then

    v      = B_v z_k + C_v u + sigma * noise               (C_v scaled by 0.5)
    token  = A_l z_k + lambda * s * D_l u + sigma * noise     (every token)

with ``s = 1`` for adjective-bearing records and ``s = 0.25`` otherwise.
The four maps are drawn once per seed and shared by all categories, so a
probe fit on some categories transfers to the rest.

Every random draw comes from its own stream keyed on the seed, so changing
``context_visibility`` (or the adjective fraction) leaves the maps, latents and
noise untouched. That is what makes sweeps over lambda paired comparisons.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset, build_dataset, write_dataset
from .errors import ConfigError

ATTENUATION = 0.25
# context moves a visual vector half as far as its category does
VISUAL_CONTEXT_SCALE = 0.5

_MAPS, _LATENT, _CONTEXT, _ADJ, _TOKENS, _NOISE_V, _NOISE_L, _IMAGES, _ADJ_COUNT = range(9)


@dataclass(frozen=True)
class SynthSpec:
    n_categories: int = 50
    instances_per_category: int = 20
    latent_dim: int = 16
    context_dim: int = 8
    d_L: int = 32
    d_V: int = 48
    max_tokens: int = 3
    context_visibility: float = 1.0
    adjective_fraction: float = 0.5
    noise: float = 0.05
    seed: int = 0
    objects_per_image: int = 2

    def validate(self):
        for name in ("n_categories", "instances_per_category", "latent_dim", "context_dim",
                     "d_L", "d_V", "max_tokens", "objects_per_image"):
            if getattr(self, name) < 1:
                raise ConfigError(f"SynthSpec.{name} must be >= 1")
        if not 0.0 <= self.context_visibility <= 1.0:
            raise ConfigError("context_visibility must lie in [0, 1]")
        if not 0.0 <= self.adjective_fraction <= 1.0:
            raise ConfigError("adjective_fraction must lie in [0, 1]")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        return self

    def replace(self, **kw) -> "SynthSpec":
        return SynthSpec(**{**asdict(self), **kw})


def _rng(seed, stream):
    return np.random.default_rng([seed, stream])


def generate_synthetic(spec: SynthSpec, return_latents=False):
    """Build a Dataset from ``spec``; optionally also return the latents.

    Records are category-major: ``record_id = k * instances + j``. Objects are
    grouped into images of ``objects_per_image`` distinct categories, and each
    mention gets its own caption.
    """
    spec.validate()
    K, n_inst = spec.n_categories, spec.instances_per_category
    m, p = spec.latent_dim, spec.context_dim
    N = K * n_inst

    g = _rng(spec.seed, _MAPS)
    A_l = g.standard_normal((spec.d_L, m)) / np.sqrt(m)
    D_l = g.standard_normal((spec.d_L, p)) / np.sqrt(p)
    B_v = g.standard_normal((spec.d_V, m)) / np.sqrt(m)
    C_v = VISUAL_CONTEXT_SCALE * g.standard_normal((spec.d_V, p)) / np.sqrt(p)

    z = _rng(spec.seed, _LATENT).standard_normal((K, m))
    u = _rng(spec.seed, _CONTEXT).standard_normal((N, p))
    cat = np.repeat(np.arange(K), n_inst)
    adj = _rng(spec.seed, _ADJ).random(N) < spec.adjective_fraction
    adj_count = np.where(adj, _rng(spec.seed, _ADJ_COUNT).integers(1, 3, size=N), 0)
    tokens = _rng(spec.seed, _TOKENS).integers(1, spec.max_tokens + 1, size=N)

    vis = z[cat] @ B_v.T + u @ C_v.T + spec.noise * _rng(spec.seed, _NOISE_V).standard_normal((N, spec.d_V))

    strength = spec.context_visibility * np.where(adj, 1.0, ATTENUATION)
    base = z[cat] @ A_l.T + strength[:, None] * (u @ D_l.T)
    # noise is drawn at full max_tokens width so token counts do not shift the stream
    tok_noise = _rng(spec.seed, _NOISE_L).standard_normal((N, spec.max_tokens, spec.d_L))
    lang = np.concatenate([
        base[j][None, :] + spec.noise * tok_noise[j, :tokens[j]] for j in range(N)
    ]) if N else np.zeros((0, spec.d_L))

    image_id = _assign_images(K, n_inst, spec.objects_per_image, _rng(spec.seed, _IMAGES))
    meta = [
        {
            "record_id": j,
            "category_id": int(cat[j]),
            "image_id": int(image_id[j]),
            "caption_id": j,
            "token_count": int(tokens[j]),
            "adjective_count": int(adj_count[j]),
        }
        for j in range(N)
    ]
    ds = build_dataset(meta, lang, vis, source_tag=f"synthetic:seed={spec.seed}",
                       context_visibility=spec.context_visibility)
    if return_latents:
        return ds, {"z": z, "u": u, "category": cat, "adjective": adj,
                    "maps": {"A_l": A_l, "D_l": D_l, "B_v": B_v, "C_v": C_v}}
    return ds


def _assign_images(K, n_inst, per_image, rng):
    # for each instance slot, shuffle categories and chunk them, so images never repeat a category
    image_id = np.empty(K * n_inst, dtype=np.int64)
    per_slot = -(-K // per_image)
    for j in range(n_inst):
        order = rng.permutation(K)
        for pos, k in enumerate(order):
            image_id[k * n_inst + j] = j * per_slot + pos // per_image
    return image_id


def write_synthetic(spec: SynthSpec, path) -> Dataset:
    """Generate, write the container, and store the spec as ``synth_spec.json``."""
    ds = generate_synthetic(spec)
    path = write_dataset(ds, path)
    (path / "synth_spec.json").write_text(json.dumps(asdict(spec), indent=1, sort_keys=True) + "\n")
    return ds
