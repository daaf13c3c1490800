#!/usr/bin/env python3
"""Export a CNN trunk as a backbone package and dump golden activations.

A package is a directory holding model.onnx, whose graph outputs are the tap
points, and manifest.json. Golden dumps go to <package>/golden/:
input_NNN.pft holds a preprocessed [1,3,S,S] input, input_NNN/<tap>.pft
holds onnxruntime activations, and tolerance.json holds the max-abs bound.

    python tools/export_backbone.py r18 backbones/r18
    python tools/export_backbone.py wr50 backbones/wr50 --golden 3
    python tools/export_backbone.py tiny tests/data/tiny_backbone --random-weights --golden 3
"""

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]
TAPS = ["layer1", "layer2", "layer3"]


def write_pft(path, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"PFT1")
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.tobytes())


class TinyNet(nn.Module):
    """ResNet-shaped network small enough to commit (input 64)."""

    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 8, 5, stride=2, padding=2, bias=False), nn.BatchNorm2d(8), nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1))
        self.layer1 = Block(8, 8, 1)
        self.layer2 = Block(8, 12, 2)
        self.layer3 = Block(12, 16, 2, groups=4, dilation=2)

    def forward(self, x):
        x = self.stem(x)
        a = self.layer1(x)
        b = self.layer2(a)
        c = self.layer3(b)
        return a, b, c


class Block(nn.Module):
    def __init__(self, cin, cout, stride, groups=1, dilation=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=dilation, dilation=dilation, groups=groups, bias=True)
        self.gate = nn.Sigmoid()
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.AvgPool2d(stride, stride) if stride > 1 else nn.Identity(),
                                      nn.Conv2d(cin, cout, 1, bias=False))

    def forward(self, x):
        y = torch.relu(self.bn1(self.conv1(x)))
        y = self.conv2(y)
        y = y * self.gate(y)
        skip = x if self.down is None else self.down(x)
        return torch.clamp(y + skip, 0.0, 6.0)


class Trunk(nn.Module):
    """torchvision ResNet truncated after layer3, returning all three taps."""

    def __init__(self, net):
        super().__init__()
        self.net = net

    def forward(self, x):
        n = self.net
        x = n.maxpool(n.relu(n.bn1(n.conv1(x))))
        a = n.layer1(x)
        b = n.layer2(a)
        c = n.layer3(b)
        return a, b, c


def build(arch, random_weights):
    torch.manual_seed(0)
    if arch == "tiny":
        net = TinyNet()
        for m in net.modules():
            if isinstance(m, nn.BatchNorm2d):
                nn.init.uniform_(m.weight, 0.5, 1.5)
                nn.init.uniform_(m.bias, -0.2, 0.2)
                m.running_mean.uniform_(-0.2, 0.2)
                m.running_var.uniform_(0.5, 1.5)
        return net, 64
    import torchvision

    if arch == "r18":
        weights = None if random_weights else torchvision.models.ResNet18_Weights.IMAGENET1K_V1
        net = torchvision.models.resnet18(weights=weights)
    elif arch == "wr50":
        weights = None if random_weights else torchvision.models.Wide_ResNet50_2_Weights.IMAGENET1K_V1
        net = torchvision.models.wide_resnet50_2(weights=weights)
    else:
        raise SystemExit(f"unknown architecture: {arch}")
    return Trunk(net), 224


def export(arch, out, random_weights, golden, opset):
    model, size = build(arch, random_weights)
    model.eval()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    probe = torch.zeros(1, 3, size, size)
    with torch.no_grad():
        shapes = [tuple(t.shape[1:]) for t in model(probe)]
    torch.onnx.export(model, probe, out / "model.onnx", input_names=["input"], output_names=TAPS,
                      opset_version=opset, dynamo=False)
    manifest = {
        "name": arch,
        "input_size": size,
        "input_name": "input",
        "model_file": "model.onnx",
        "mean": IMAGENET_MEAN,
        "std": IMAGENET_STD,
        "taps": [{"name": n, "shape": list(s)} for n, s in zip(TAPS, shapes)],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{arch}: taps {shapes}, total channels {sum(s[0] for s in shapes)}")
    if golden:
        dump_golden(out, size, golden)


def dump_golden(out, size, count):
    import onnxruntime as ort

    sess = ort.InferenceSession(str(out / "model.onnx"), providers=["CPUExecutionProvider"])
    rng = np.random.default_rng(1234)
    gdir = out / "golden"
    for k in range(count):
        if k == 0:
            x = np.zeros((1, 3, size, size), np.float32)
        else:
            x = rng.normal(0.0, 1.0, (1, 3, size, size)).astype(np.float32)
        write_pft(gdir / f"input_{k:03d}.pft", x)
        for name, value in zip(TAPS, sess.run(TAPS, {"input": x})):
            if not np.all(np.isfinite(value)):
                raise SystemExit(f"non-finite activations in {name}")
            write_pft(gdir / f"input_{k:03d}" / f"{name}.pft", value[0])
    (gdir / "tolerance.json").write_text(json.dumps({"max_abs": 1e-4, "images": count}) + "\n")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("arch", choices=["r18", "wr50", "tiny"])
    p.add_argument("out")
    p.add_argument("--random-weights", action="store_true", help="skip downloading pretrained weights")
    p.add_argument("--golden", type=int, default=0, help="number of golden inputs to dump")
    p.add_argument("--opset", type=int, default=13)
    args = p.parse_args(argv)
    export(args.arch, args.out, args.random_weights, args.golden, args.opset)


if __name__ == "__main__":
    sys.exit(main())
