#!/usr/bin/env python3
"""Convert torchvision VGG-19 weights into an srfm extractor archive.

    python3 tools/convert_vgg19.py --out vgg19.srfm                 # torchvision download
    python3 tools/convert_vgg19.py --weights vgg19.pth --out vgg19.srfm
    python3 tools/convert_vgg19.py --random --out vgg19_random.srfm

The archive keeps the 16 convolutions of `features` as float64 arrays named
`features.<k>.weight` / `features.<k>.bias` (k counts convolutions only) and
records the ImageNet input normalization the weights were trained with.
Pass `--set extractor_path=vgg19.srfm` to `srfm train` to use it.
"""

import argparse
import json
import os
import struct
import sys

import numpy as np

MAGIC = b"SRFMARC1"
PLAN = [64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0,
        512, 512, 512, 512, 0, 512, 512, 512, 512]


def write_archive(path, manifest, arrays):
    names = sorted(arrays)
    entries, offset = [], 0
    for name in names:
        a = arrays[name]
        shape = list(a.shape) + [1] * (4 - a.ndim)
        entries.append({"name": name, "shape": shape, "offset": offset, "count": int(a.size)})
        offset += a.size
    header = json.dumps({"manifest": manifest, "arrays": entries}).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in names:
            f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_model(args):
    import torch
    import torchvision

    if args.random:
        torch.manual_seed(args.seed)
        return torchvision.models.vgg19(weights=None), False
    if args.weights:
        model = torchvision.models.vgg19(weights=None)
        state = torch.load(args.weights, map_location="cpu")
        model.load_state_dict(state.get("state_dict", state))
        return model, True
    weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
    return torchvision.models.vgg19(weights=weights), True


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--weights", help="state dict saved from torchvision.models.vgg19")
    ap.add_argument("--random", action="store_true", help="skip pretrained weights")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model, pretrained = load_model(args)
    convs = [m for m in model.features if m.__class__.__name__ == "Conv2d"]
    if len(convs) != sum(1 for l in PLAN if l > 0):
        sys.exit("unexpected VGG-19 layout: %d convolutions" % len(convs))
    arrays = {}
    for k, conv in enumerate(convs):
        arrays["features.%d.weight" % k] = conv.weight.detach().double().numpy()
        arrays["features.%d.bias" % k] = conv.bias.detach().double().numpy().reshape(1, -1, 1, 1)
    manifest = {
        "kind": "feature_extractor",
        "layers": PLAN,
        "tap_conv": -1,
        "image_channels": 3,
        "input_shift": [0.485, 0.456, 0.406],
        "input_scale": [0.229, 0.224, 0.225],
        "pretrained": pretrained,
        "source": "torchvision vgg19" + ("" if pretrained else " (random init)"),
    }
    write_archive(args.out, manifest, arrays)
    print("wrote %s (%d convolutions, pretrained=%s)" % (args.out, len(convs), pretrained))


if __name__ == "__main__":
    main()
