"""Stand-in for vgdz_sd_worker.py that speaks the same protocol with numpy.

Environment knobs:
  STUB_CANVAS       canvas side (default 64)
  STUB_PREDICTION   epsilon | v_prediction
  STUB_FAIL         startup | exit | garbage | predict | shape
  STUB_ARGV_FILE    write argv here as JSON
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

LATENT_SCALE = 0.5
CONTEXT = (77, 8)


def send(header, payload=None):
    out = sys.stdout.buffer
    out.write((json.dumps(header) + "\n").encode())
    if payload is not None:
        out.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())
    out.flush()


def read_floats(n):
    data = sys.stdin.buffer.read(4 * n)
    if len(data) != 4 * n:
        sys.exit(0)
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def text_row(text):
    digest = hashlib.sha256(text.encode()).digest()
    return np.frombuffer(digest[:32], dtype=np.uint8)[:8].astype(np.float64) / 255.0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--device", default="auto")
    parser.add_argument("--cache-dir")
    parser.add_argument("--offline", action="store_true")
    args = parser.parse_args()

    if os.environ.get("STUB_ARGV_FILE"):
        with open(os.environ["STUB_ARGV_FILE"], "w") as f:
            json.dump(sys.argv[1:], f)

    fail = os.environ.get("STUB_FAIL", "")
    if fail == "exit":
        sys.exit(3)
    if fail == "garbage":
        sys.stdout.buffer.write(b"this is not json\n")
        sys.stdout.buffer.flush()
        return
    if fail == "startup":
        send({"ok": False, "error": "model not found: " + args.checkpoint})
        return

    canvas = int(os.environ.get("STUB_CANVAS", "64"))
    side = canvas // 8
    prediction = os.environ.get("STUB_PREDICTION", "epsilon")
    send({
        "ok": True,
        "descriptor": {
            "kind": "pretrained",
            "checkpoint": args.checkpoint,
            "latent_shape": [4, side, side],
            "canvas": canvas,
            "latent_scale": LATENT_SCALE,
            "schedule": {"kind": "scaled_linear", "beta_start": 0.00085, "beta_end": 0.012, "timesteps": 1000},
            "prediction_type": prediction,
        },
    })

    stdin = sys.stdin.buffer
    while True:
        line = stdin.readline()
        if not line:
            return
        req = json.loads(line)
        op = req["op"]
        if op == "shutdown":
            return
        if op == "encode_image":
            c, h, w = req["shape"]
            px = read_floats(c * h * w).reshape(c, h, w)
            pooled = px.reshape(c, h // 8, 8, w // 8, 8).mean(axis=(2, 4))
            lat = np.concatenate([pooled, pooled.mean(axis=0, keepdims=True)], axis=0)
            shape = list(lat.shape) if fail != "shape" else [4, side + 1, side]
            send({"ok": True, "shape": shape}, lat)
        elif op == "encode_text":
            words = req["text"].split()
            ctx = np.zeros(CONTEXT)
            ctx[0] = text_row(" ".join(words[:75]))
            send({"ok": True, "shape": list(CONTEXT), "truncated": len(words) > 75}, ctx)
        elif op == "predict_noise":
            steps = req["timesteps"]
            lc, lh, lw = req["latent_shape"]
            cl, cd = req["context_shape"]
            ctx = read_floats(cl * cd).reshape(cl, cd)
            lats = read_floats(len(steps) * lc * lh * lw).reshape(len(steps), lc, lh, lw)
            if fail == "predict":
                send({"ok": False, "error": "out of memory"})
                continue
            out = np.stack([0.5 * z + ctx[0, 0] + t / 1000.0 for z, t in zip(lats, steps)])
            send({"ok": True, "count": len(steps)}, out)
        else:
            send({"ok": False, "error": "unknown op " + op})


if __name__ == "__main__":
    main()
