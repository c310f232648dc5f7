#!/usr/bin/env python3
"""Model-free backend worker for protocol tests.

Speaks the freeseg JSON-lines protocol on stdin/stdout with deterministic,
image-dependent answers: pooled colour features, a fixed caption and hashed
embeddings. Standard library only.
"""

import base64
import hashlib
import json
import struct
import sys

DIM = 32


def pooled(rgb, width, height, r):
    """Mean RGB over an r x r grid of cells, as a [3, r, r] list."""
    out = [[[0.0] * r for _ in range(r)] for _ in range(3)]
    for cy in range(r):
        y0, y1 = cy * height // r, max(cy * height // r + 1, (cy + 1) * height // r)
        for cx in range(r):
            x0, x1 = cx * width // r, max(cx * width // r + 1, (cx + 1) * width // r)
            acc = [0.0, 0.0, 0.0]
            n = 0
            for y in range(y0, min(y1, height)):
                for x in range(x0, min(x1, width)):
                    i = 3 * (y * width + x)
                    for c in range(3):
                        acc[c] += rgb[i + c]
                    n += 1
            for c in range(3):
                out[c][cy][cx] = acc[c] / max(n, 1) / 255.0
    return out


def encode(values):
    return base64.b64encode(struct.pack("<%df" % len(values), *values)).decode()


def hashed(data):
    digest = hashlib.sha256(data).digest()
    while len(digest) < DIM:
        digest += hashlib.sha256(digest).digest()
    return [b / 255.0 - 0.5 for b in digest[:DIM]]


def handle(req):
    op = req.get("op")
    if op == "embed_text":
        return {"embedding": hashed(req["text"].encode())}
    rgb = base64.b64decode(req["rgb_b64"])
    w, h = req["width"], req["height"]
    if op == "caption":
        return {"caption": "a red square on a blue background"}
    if op == "embed_image":
        return {"embedding": hashed(rgb)}
    if op == "features":
        maps = []
        kinds = ["feature"] + (["attention"] if req["include_attention"] else [])
        for r in req["resolutions"]:
            grid = pooled(rgb, w, h, r)
            for kind in kinds:
                flat = [v if kind == "feature" else 1.0 - v for c in grid for row in c for v in row]
                maps.append({
                    "resolution": r,
                    "kind": kind,
                    "block": "stub.%s.%d" % (kind, r),
                    "order": 0,
                    "shape": [3, r, r],
                    "data_b64": encode(flat),
                })
        return {"maps": maps}
    return {"error": "unknown op %r" % op}


def main():
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            reply = handle(json.loads(line))
        except Exception as e:  # report, keep serving
            reply = {"error": "%s: %s" % (type(e).__name__, e)}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
