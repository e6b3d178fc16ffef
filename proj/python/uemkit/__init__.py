"""Python bindings for uemkit."""

from ._core import (
    default_response,
    encode_aem,
    encode_pem,
    encode_wem,
    ergas,
    height_to_psf,
    nn_baseline,
    psnr,
    psnr_si,
    radial_to_2d,
    run_cli,
    sam,
    synth_scene,
    train,
    uniform_wavelengths,
)

__all__ = [
    "default_response",
    "encode_aem",
    "encode_pem",
    "encode_wem",
    "ergas",
    "height_to_psf",
    "nn_baseline",
    "psnr",
    "psnr_si",
    "radial_to_2d",
    "run_cli",
    "sam",
    "synth_scene",
    "train",
    "uniform_wavelengths",
]
