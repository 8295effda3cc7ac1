"""Model container: embedding config, latent table(s), and the three heads.

In shared-latent mode all heads decode from one table; in separate mode the
radiance head keeps its own table and the light/depth heads share a second
one. Toggling the mode only changes which table handles receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderHead, init_latent, make_decoder_head
from .geometry import EmbeddingConfig
from .tensor import Tensor


@dataclass
class ModelConfig:
    n_latents: int = 64
    latent_dim: int = 64
    fourier_m: int = 16
    max_freq: float = 64.0
    n_heads: int = 2
    dropout: float = 0.1
    d_min: float = 0.1
    d_max: float = 5.0
    share_latents: bool = True
    precision: str = "f64"  # "f32" | "f64"
    density_bias: float = 0.1

    @property
    def dtype(self):
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        return np.float32 if self.precision == "f32" else np.float64


class SceneModel:
    """All learnable state for one scene, plus decode plumbing."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.embed = EmbeddingConfig(
            m_origin=cfg.fourier_m,
            m_ray=cfg.fourier_m,
            m_point=cfg.fourier_m,
            max_freq=cfg.max_freq,
        )
        dtype = cfg.dtype
        self.latent_r = init_latent(cfg.n_latents, cfg.latent_dim, seed, dtype)
        if cfg.share_latents:
            self.latent_dl = self.latent_r
        else:
            self.latent_dl = init_latent(cfg.n_latents, cfg.latent_dim, seed + 1, dtype)
        qw_ray = self.embed.ray_query_width
        qw_vol = self.embed.vol_query_width
        self.heads: dict[str, DecoderHead] = {
            "radiance": make_decoder_head(
                "radiance", qw_vol, cfg.latent_dim, seed + 11,
                n_heads=cfg.n_heads, dropout_rate=cfg.dropout, dtype=dtype,
                density_bias=cfg.density_bias,
            ),
            "light": make_decoder_head(
                "light", qw_ray, cfg.latent_dim, seed + 12,
                n_heads=cfg.n_heads, dropout_rate=cfg.dropout, dtype=dtype,
            ),
            "depth": make_decoder_head(
                "depth", qw_ray, cfg.latent_dim, seed + 13,
                n_heads=cfg.n_heads, dropout_rate=cfg.dropout, dtype=dtype,
            ),
        }

    @property
    def d_min(self) -> float:
        return self.cfg.d_min

    @property
    def d_max(self) -> float:
        return self.cfg.d_max

    def latents_for(self, kind: str) -> Tensor:
        return self.latent_r if kind == "radiance" else self.latent_dl

    def asarray(self, x) -> np.ndarray:
        """Cast constant inputs to the model precision."""
        return np.asarray(x, dtype=self.cfg.dtype)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("latent_r", self.latent_r)]
        if self.latent_dl is not self.latent_r:
            out.append(("latent_dl", self.latent_dl))
        names = ("wq", "bq", "wk", "bk", "wv", "bv", "w_out", "b_out")
        for kind in ("radiance", "light", "depth"):
            head = self.heads[kind]
            for name, p in zip(names, head.parameters()):
                out.append((f"{kind}.{name}", p))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]
