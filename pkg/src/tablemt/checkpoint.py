"""Versioned binary checkpoint: a JSON header (config, epoch, metric
history, tensor manifest) followed by the raw row-major float64 tensor
bytes.  Writing the same state twice produces identical bytes, and
load(save(x)) is bit-exact."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .detector import Mode
from .encoder import EncoderConfig
from .trainer import Checkpoint, TrainConfig, Variant

MAGIC = b"TBLMT001"


def _config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "ema_lambda": cfg.ema_lambda,
        "eta": cfg.eta,
        "kappa": cfg.kappa,
        "aug_rate": cfg.aug_rate,
        "batch": cfg.batch,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "mode": cfg.mode.value,
        "variant": cfg.variant.value,
        "ablations": sorted(cfg.ablations),
        "encoder": {
            "d": cfg.encoder.d,
            "layers": cfg.encoder.layers,
            "vocab_buckets": cfg.encoder.vocab_buckets,
            "window": cfg.encoder.window,
            "max_n": cfg.encoder.max_n,
        },
        "encoder_kind": "hash_window_mixer",
    }


def _config_from_dict(d: dict) -> TrainConfig:
    enc = d["encoder"]
    return TrainConfig(
        alpha=d["alpha"],
        beta=d["beta"],
        ema_lambda=d["ema_lambda"],
        eta=d["eta"],
        kappa=d["kappa"],
        aug_rate=d["aug_rate"],
        batch=d["batch"],
        epochs=d["epochs"],
        lr=d["lr"],
        seed=d["seed"],
        mode=Mode(d["mode"]),
        variant=Variant(d["variant"]),
        ablations=frozenset(d["ablations"]),
        encoder=EncoderConfig(
            d=enc["d"],
            layers=enc["layers"],
            vocab_buckets=enc["vocab_buckets"],
            window=enc["window"],
            max_n=enc["max_n"],
        ),
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = []
    blobs = []
    for group, params in (("student", ckpt.student), ("teacher", ckpt.teacher)):
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            tensors.append({"name": f"{group}/{name}", "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = {
        "version": 1,
        "config": _config_to_dict(ckpt.config),
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "tensors": tensors,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    off = len(MAGIC) + 8
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    if header["version"] != 1:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    off += hlen
    student: dict = {}
    teacher: dict = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
        group, name = spec["name"].split("/", 1)
        (student if group == "student" else teacher)[name] = arr
    return Checkpoint(
        config=_config_from_dict(header["config"]),
        student=student,
        teacher=teacher,
        epoch=header["epoch"],
        history=header["history"],
    )
