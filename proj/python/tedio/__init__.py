"""Toy video DiT with temporal-diagonal latent optimization."""

from ._core import (
    Model,
    dynamic_proxy,
    flicker_score,
    gen_clip,
    inject_jitter,
    read_tdt,
    separation_auroc,
    write_tdt,
)

__all__ = [
    "Model",
    "dynamic_proxy",
    "flicker_score",
    "gen_clip",
    "inject_jitter",
    "read_tdt",
    "separation_auroc",
    "write_tdt",
]
