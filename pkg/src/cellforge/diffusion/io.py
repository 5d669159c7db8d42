"""Weight container: a zip holding a JSON header and an npz of parameters.

The header pins the format version, network spec, schedule, normalization
ranges and training seed, so a loaded model is fully reconstructable.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from ..errors import InputError
from .model import Denoiser
from .schedule import NoiseSchedule
from .unet import DenoiserSpec, DenoiserUNet

FORMAT_VERSION = 1


def save_denoiser(denoiser: Denoiser, path) -> Path:
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "spec": denoiser.spec.to_json(),
        "schedule_gammas": np.asarray(denoiser.schedule.gammas).tolist(),
        "norm_ranges": [list(r) for r in denoiser.norm_ranges],
        "seed": denoiser.seed,
    }
    arrays = {k: v.detach().numpy() for k, v in denoiser.net.state_dict().items()}
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as z:
        z.writestr("header.json", json.dumps(header))
        z.writestr("weights.npz", buf.getvalue())
    return path


def load_denoiser(path) -> Denoiser:
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing weights container: {path}")
    with zipfile.ZipFile(path) as z:
        header = json.loads(z.read("header.json"))
        if header.get("format_version") != FORMAT_VERSION:
            raise InputError(
                f"weights format {header.get('format_version')} != supported {FORMAT_VERSION}"
            )
        weights = np.load(io.BytesIO(z.read("weights.npz")))
        spec = DenoiserSpec.from_json(header["spec"])
        net = DenoiserUNet(spec)
        state = {k: torch.tensor(weights[k]) for k in weights.files}
        net.load_state_dict(state)
        net.eval()
        return Denoiser(
            spec=spec,
            schedule=NoiseSchedule(np.asarray(header["schedule_gammas"])),
            net=net,
            norm_ranges=tuple(tuple(r) for r in header["norm_ranges"]),
            seed=header.get("seed", 0),
        )
