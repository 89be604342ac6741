#!/usr/bin/env python3
"""Stable Diffusion worker for the vgdz pretrained backend.

Speaks the line-JSON + float32 payload protocol documented in
include/vgdz/pretrained_backend.hpp over stdin/stdout. Requires torch,
diffusers and transformers. Log output goes to stderr only.
"""

import argparse
import json
import os
import sys

import numpy as np


def log(msg):
    print(f"[vgdz-sd-worker] {msg}", file=sys.stderr, flush=True)


class Channel:
    def __init__(self):
        self.inp = sys.stdin.buffer
        self.out = sys.stdout.buffer

    def read_line(self):
        line = self.inp.readline()
        if not line:
            return None
        return json.loads(line)

    def read_floats(self, count):
        want = count * 4
        buf = bytearray()
        while len(buf) < want:
            chunk = self.inp.read(want - len(buf))
            if not chunk:
                raise EOFError("payload truncated")
            buf.extend(chunk)
        return np.frombuffer(bytes(buf), dtype="<f4")

    def send(self, header, payload=None):
        self.out.write(json.dumps(header).encode("utf-8") + b"\n")
        if payload is not None:
            self.out.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())
        self.out.flush()


def load(args):
    import torch
    from diffusers import AutoencoderKL, DDPMScheduler, UNet2DConditionModel
    from transformers import CLIPTextModel, CLIPTokenizer

    if args.device == "auto":
        device = "cuda" if torch.cuda.is_available() else "cpu"
    else:
        device = args.device
    dtype = torch.float16 if (device == "cuda" and args.half) else torch.float32
    common = dict(cache_dir=args.cache_dir or None, local_files_only=args.offline)
    ckpt = args.checkpoint
    log(f"loading {ckpt} on {device}")
    vae = AutoencoderKL.from_pretrained(ckpt, subfolder="vae", torch_dtype=dtype, **common).to(device).eval()
    unet = UNet2DConditionModel.from_pretrained(ckpt, subfolder="unet", torch_dtype=dtype, **common).to(device).eval()
    text_encoder = CLIPTextModel.from_pretrained(ckpt, subfolder="text_encoder", torch_dtype=dtype, **common).to(device).eval()
    tokenizer = CLIPTokenizer.from_pretrained(ckpt, subfolder="tokenizer", **common)
    scheduler = DDPMScheduler.from_pretrained(ckpt, subfolder="scheduler", **common)
    return torch, device, dtype, vae, unet, text_encoder, tokenizer, scheduler


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--device", default="auto")
    ap.add_argument("--cache-dir", default=os.environ.get("VGDZ_MODEL_CACHE", ""))
    ap.add_argument("--offline", action="store_true")
    ap.add_argument("--half", action="store_true")
    args = ap.parse_args()
    if args.offline:
        os.environ["HF_HUB_OFFLINE"] = "1"

    ch = Channel()
    try:
        torch, device, dtype, vae, unet, text_encoder, tokenizer, scheduler = load(args)
    except Exception as exc:  # report any load failure to the client
        ch.send({"ok": False, "error": f"{type(exc).__name__}: {exc}"})
        return 1

    cfg = scheduler.config
    down = 2 ** (len(vae.config.block_out_channels) - 1)
    side = int(unet.config.sample_size)
    schedule_kind = cfg.beta_schedule
    if schedule_kind not in ("linear", "scaled_linear"):
        ch.send({"ok": False, "error": f"unsupported beta schedule {schedule_kind}"})
        return 1
    descriptor = {
        "kind": "pretrained",
        "checkpoint": args.checkpoint,
        "latent_shape": [int(unet.config.in_channels), side, side],
        "canvas": side * down,
        "latent_scale": float(vae.config.scaling_factor),
        "schedule": {
            "kind": schedule_kind,
            "beta_start": float(cfg.beta_start),
            "beta_end": float(cfg.beta_end),
            "timesteps": int(cfg.num_train_timesteps),
        },
        "prediction_type": cfg.prediction_type,
    }
    ch.send({"ok": True, "descriptor": descriptor})

    with torch.no_grad():
        while True:
            req = ch.read_line()
            if req is None or req.get("op") == "shutdown":
                return 0
            op = req.get("op")
            try:
                if op == "encode_image":
                    c, h, w = req["shape"]
                    px = ch.read_floats(c * h * w).reshape(1, c, h, w)
                    x = torch.from_numpy(px.copy()).to(device, dtype)
                    mean = vae.encode(x).latent_dist.mean[0]
                    ch.send({"ok": True, "shape": list(mean.shape)}, mean.float().cpu().numpy())
                elif op == "encode_text":
                    text = req["text"]
                    limit = tokenizer.model_max_length
                    full = tokenizer(text, truncation=False).input_ids
                    ids = tokenizer(text, padding="max_length", max_length=limit, truncation=True,
                                    return_tensors="pt").input_ids.to(device)
                    hidden = text_encoder(ids)[0][0]
                    ch.send({"ok": True, "shape": list(hidden.shape), "truncated": len(full) > limit},
                            hidden.float().cpu().numpy())
                elif op == "predict_noise":
                    steps = req["timesteps"]
                    c, h, w = req["latent_shape"]
                    length, dim = req["context_shape"]
                    ctx = ch.read_floats(length * dim).reshape(1, length, dim)
                    lat = ch.read_floats(len(steps) * c * h * w).reshape(len(steps), c, h, w)
                    ctx_t = torch.from_numpy(ctx.copy()).to(device, dtype).expand(len(steps), -1, -1)
                    lat_t = torch.from_numpy(lat.copy()).to(device, dtype)
                    t = torch.tensor(steps, device=device, dtype=torch.long)
                    out = unet(lat_t, t, encoder_hidden_states=ctx_t).sample
                    ch.send({"ok": True, "count": len(steps)}, out.float().cpu().numpy())
                else:
                    ch.send({"ok": False, "error": f"unknown op {op!r}"})
            except Exception as exc:
                ch.send({"ok": False, "error": f"{type(exc).__name__}: {exc}"})


if __name__ == "__main__":
    sys.exit(main())
