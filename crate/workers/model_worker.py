#!/usr/bin/env python3
"""Backend worker serving Stable Diffusion features, BLIP captions and CLIP
embeddings over the freeseg JSON-lines protocol.

    freeseg --backend-cmd "python3 workers/model_worker.py --device cuda" \
        --cache cache/voc bench --dataset voc21 --data-root VOCdevkit/VOC2012

Requires torch, diffusers, transformers and pillow. Models load lazily, so a
run that only needs text embeddings never touches the diffusion weights.
"""

import argparse
import base64
import json
import sys

import numpy as np
import torch
from PIL import Image


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    p.add_argument("--sd-model", default="runwayml/stable-diffusion-v1-5")
    p.add_argument("--caption-model", default="Salesforce/blip-image-captioning-large")
    p.add_argument("--clip-model", default="openai/clip-vit-base-patch32")
    p.add_argument("--size", type=int, default=512, help="side of the square diffusion input")
    p.add_argument(
        "--parts",
        default="encoder,decoder",
        help="U-Net halves whose resblocks are exported (encoder, decoder or both)",
    )
    return p.parse_args()


def decode_image(req):
    rgb = base64.b64decode(req["rgb_b64"])
    arr = np.frombuffer(rgb, dtype=np.uint8).reshape(req["height"], req["width"], 3)
    return Image.fromarray(arr, "RGB")


def encode_tensor(t):
    return base64.b64encode(t.detach().float().cpu().contiguous().numpy().astype("<f4").tobytes()).decode()


class Models:
    def __init__(self, args):
        self.args = args
        self.device = torch.device(args.device)
        self.dtype = torch.float16 if self.device.type == "cuda" else torch.float32
        self._sd = None
        self._blip = None
        self._clip = None

    # diffusion ---------------------------------------------------------

    def sd(self):
        if self._sd is None:
            from diffusers import StableDiffusionPipeline

            pipe = StableDiffusionPipeline.from_pretrained(self.args.sd_model, torch_dtype=self.dtype)
            pipe = pipe.to(self.device)
            pipe.set_progress_bar_config(disable=True)
            with torch.no_grad():
                ids = pipe.tokenizer(
                    [""], padding="max_length", max_length=pipe.tokenizer.model_max_length, return_tensors="pt"
                ).input_ids.to(self.device)
                empty = pipe.text_encoder(ids)[0]
            self._sd = (pipe, empty)
        return self._sd

    def modules(self, unet):
        """Resblocks and attention blocks in forward order, with their names."""
        parts = set(self.args.parts.split(","))
        halves = []
        if "encoder" in parts:
            halves.append(("down_blocks", unet.down_blocks))
        if "decoder" in parts:
            halves.append(("up_blocks", unet.up_blocks))
        out = []
        for prefix, blocks in halves:
            for i, block in enumerate(blocks):
                for j, resnet in enumerate(block.resnets):
                    out.append(("feature", "%s.%d.resnets.%d" % (prefix, i, j), resnet))
                for j, attn in enumerate(getattr(block, "attentions", None) or []):
                    out.append(("attention", "%s.%d.attentions.%d" % (prefix, i, j), attn))
        return out

    @torch.no_grad()
    def features(self, req):
        pipe, empty = self.sd()
        size = self.args.size
        image = decode_image(req).resize((size, size), Image.BICUBIC)
        x = torch.from_numpy(np.asarray(image)).permute(2, 0, 1)[None].to(self.device, self.dtype)
        x = x / 127.5 - 1.0
        latents = pipe.vae.encode(x).latent_dist.mean * pipe.vae.config.scaling_factor
        t = int(req["timestep"])
        if t > 0:
            noise = torch.randn(latents.shape, generator=torch.Generator().manual_seed(0)).to(latents)
            latents = pipe.scheduler.add_noise(latents, noise, torch.tensor([t], device=self.device))

        wanted = set(req["resolutions"])
        kinds = {"feature", "attention"} if req["include_attention"] else {"feature"}
        captured = []
        hooks = []
        for kind, name, module in self.modules(pipe.unet):
            if kind not in kinds:
                continue

            def hook(_m, _inp, output, kind=kind, name=name):
                out = getattr(output, "sample", output)
                if isinstance(out, tuple):
                    out = out[0]
                if out.shape[-1] in wanted and out.shape[-1] == out.shape[-2]:
                    captured.append((kind, name, out[0]))

            hooks.append(module.register_forward_hook(hook))
        try:
            pipe.unet(latents, torch.tensor([t], device=self.device), encoder_hidden_states=empty)
        finally:
            for h in hooks:
                h.remove()

        maps = []
        order = {}
        for kind, name, tensor in captured:
            r = tensor.shape[-1]
            n = order.get((r, kind), 0)
            order[(r, kind)] = n + 1
            maps.append({
                "resolution": r,
                "kind": kind,
                "block": name,
                "order": n,
                "shape": list(tensor.shape),
                "data_b64": encode_tensor(tensor),
            })
        missing = wanted - {m["resolution"] for m in maps}
        if missing:
            raise ValueError("no U-Net block at resolution(s) %s" % sorted(missing))
        return {"maps": maps}

    # captioner ---------------------------------------------------------

    @torch.no_grad()
    def caption(self, req):
        if self._blip is None:
            from transformers import BlipForConditionalGeneration, BlipProcessor

            processor = BlipProcessor.from_pretrained(self.args.caption_model)
            model = BlipForConditionalGeneration.from_pretrained(self.args.caption_model, torch_dtype=self.dtype)
            self._blip = (processor, model.to(self.device).eval())
        processor, model = self._blip
        inputs = processor(images=decode_image(req), return_tensors="pt").to(self.device, self.dtype)
        ids = model.generate(**inputs, max_new_tokens=40, num_beams=3)
        return {"caption": processor.decode(ids[0], skip_special_tokens=True).strip()}

    # embedder ----------------------------------------------------------

    def clip(self):
        if self._clip is None:
            from transformers import CLIPModel, CLIPProcessor

            processor = CLIPProcessor.from_pretrained(self.args.clip_model)
            model = CLIPModel.from_pretrained(self.args.clip_model).to(self.device).eval()
            self._clip = (processor, model)
        return self._clip

    @torch.no_grad()
    def embed_image(self, req):
        processor, model = self.clip()
        inputs = processor(images=decode_image(req), return_tensors="pt").to(self.device)
        v = model.get_image_features(**inputs)[0].float()
        return {"embedding": (v / v.norm()).cpu().tolist()}

    @torch.no_grad()
    def embed_text(self, req):
        processor, model = self.clip()
        inputs = processor(text=[req["text"]], return_tensors="pt", padding=True).to(self.device)
        v = model.get_text_features(**inputs)[0].float()
        return {"embedding": (v / v.norm()).cpu().tolist()}


def main():
    models = Models(parse_args())
    ops = {
        "features": models.features,
        "caption": models.caption,
        "embed_image": models.embed_image,
        "embed_text": models.embed_text,
    }
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = ops.get(req.get("op"))
            reply = op(req) if op else {"error": "unknown op %r" % req.get("op")}
        except Exception as e:  # report, keep serving
            reply = {"error": "%s: %s" % (type(e).__name__, e)}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
