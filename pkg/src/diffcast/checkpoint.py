"""Denoiser checkpoints: JSON metadata plus raw float32 weight payload.

Layout mirrors the grid container: magic ``CKP1``, uint64 header length,
canonical JSON header, then each parameter array as little-endian float32 in
architecture-descriptor order. The header embeds the full noise schedule so a
checkpoint is sufficient to reproduce inference.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .denoiser import ConvArchitecture, ConvDenoiser
from .errors import ParameterError
from .gridfile import _canonical_json, atomic_write_bytes
from .schedule import NoiseSchedule

MAGIC = b"CKP1"


def save_checkpoint(path, model: ConvDenoiser, sched: NoiseSchedule,
                    train_config: dict, seed: int, step: int) -> None:
    header = {
        "architecture": model.arch.to_dict(),
        "train_config": train_config,
        "schedule": sched.to_dict(),
        "schedule_digest": sched.digest(),
        "seed": seed,
        "step": step,
    }
    head = _canonical_json(header)
    payload = b"".join(
        np.ascontiguousarray(model.weights[name], dtype="<f4").tobytes()
        for name, _ in model.arch.param_specs()
    )
    atomic_write_bytes(path, MAGIC + struct.pack("<Q", len(head)) + head + payload)


def load_checkpoint(path, dtype=np.float32):
    """Returns (model, schedule, header).

    The payload is float32; by default the model computes in float32 too.
    Pass float64 when downstream verification needs double precision.
    """
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ParameterError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    (head_len,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + head_len].decode("utf-8"))
    arch = ConvArchitecture(**header["architecture"])
    payload = blob[12 + head_len:]
    if len(payload) != arch.param_count * 4:
        raise ParameterError(
            f"{path}: payload holds {len(payload) // 4} floats, "
            f"descriptor implies {arch.param_count}"
        )
    weights = {}
    offset = 0
    for name, shape in arch.param_specs():
        count = int(np.prod(shape))
        weights[name] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=offset
        ).astype(np.float64).reshape(shape)
        offset += count * 4
    betas = np.asarray(header["schedule"]["betas"], dtype=np.float64)
    alphas = 1.0 - betas
    sched = NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))
    sched.validate()
    if sched.digest() != header["schedule_digest"]:
        raise ParameterError(f"{path}: schedule digest mismatch")
    return ConvDenoiser(arch, weights, dtype=dtype), sched, header
