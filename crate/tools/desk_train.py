#!/usr/bin/env python3
"""Desk-scale denoiser training and export.

Trains a small gradient-domain denoiser (and an image-domain one of the same
shape) on grayscale images shipped with scikit-image, then writes:

  gradient.apnpw / image.apnpw      weight archives for the Rust engine
  fixtures/<domain>_<n>.apnpfx      (input, expected output) inference pairs
  testset/*.png                     held-out 8-bit test crops
  tiny.apnpw                        a two-layer archive for loader tests

Usage: python3 tools/desk_train.py --out crates/core/tests/fixtures/desk
"""

import argparse
import json
import struct
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from skimage import color, data
from PIL import Image

WEIGHTS_MAGIC = b"APNPW1\0\0"
FIXTURE_MAGIC = b"APNPFX1\0"

TRAIN_IMAGES = [
    "astronaut", "brick", "coffee", "rocket", "clock", "page",
    "immunohistochemistry", "moon", "grass", "gravel", "text", "microaneurysms",
]
VALID_IMAGES = ["cell"]
# (name, top, left) of each held-out test crop.
TEST_CROPS = [("camera", 64, 200), ("coins", 80, 40), ("cat", 40, 90)]


# CRC-64/XZ (reflected ECMA-182 polynomial, all-ones init and xor-out).
def _crc_table():
    poly = 0xC96C5795D7870F42
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table.append(c)
    return table


_CRC_TABLE = _crc_table()


def crc64_xz(buf: bytes) -> int:
    crc = 0xFFFFFFFFFFFFFFFF
    for b in buf:
        crc = _CRC_TABLE[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


def write_container(path: Path, magic: bytes, header: dict, payload: bytes):
    head = json.dumps(header, indent=1).encode()
    blob = magic + struct.pack("<I", len(head)) + head + payload + struct.pack("<Q", crc64_xz(payload))
    path.write_bytes(blob)


def load_gray(name: str) -> np.ndarray:
    img = getattr(data, "chelsea" if name == "cat" else name)()
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
        return img.astype(np.float64)
    img = img.astype(np.float64)
    return img / 255.0 if img.max() > 1.0 else img


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def grad(x: torch.Tensor) -> torch.Tensor:
    """Periodic forward differences of (B,1,H,W) images -> (B,2,H,W)."""
    dh = torch.roll(x, -1, dims=3) - x
    dv = torch.roll(x, -1, dims=2) - x
    return torch.cat([dh, dv], dim=1)


class DeskNet(nn.Module):
    """Eight convolutions, one stride-2 down/up stage with an additive skip.

    Predicts the noise; the clean estimate is input minus output.
    """

    def __init__(self, cin: int, cout: int, width: int):
        super().__init__()
        self.head = nn.Conv2d(cin, width, 3, padding=1)
        self.enc = nn.Conv2d(width, width, 3, padding=1)
        self.down = nn.Conv2d(width, width, 2, stride=2)
        self.mid1 = nn.Conv2d(width, width, 3, padding=1)
        self.mid2 = nn.Conv2d(width, width, 3, padding=1)
        self.up = nn.ConvTranspose2d(width, width, 2, stride=2)
        self.dec = nn.Conv2d(width, width, 3, padding=1)
        self.tail = nn.Conv2d(width, cout, 3, padding=1)
        self.cout = cout

    def forward(self, x):
        h = F.relu(self.head(x))
        skip = F.relu(self.enc(h))
        h = self.down(skip)
        h = F.relu(self.mid1(h))
        h = F.relu(self.mid2(h))
        h = self.up(h) + skip
        h = F.relu(self.dec(h))
        return x[:, : self.cout] - self.tail(h)

    def layer_plan(self):
        """(module name, archive layers) in execution order."""
        conv = lambda n: [("conv", n)]
        relu = [("relu", None)]
        return (
            conv("head") + relu + conv("enc") + relu + [("save", "skip")] + conv("down")
            + conv("mid1") + relu + conv("mid2") + relu + conv("up") + [("add", "skip")]
            + conv("dec") + relu + conv("tail")
        )


def export_archive(net: DeskNet, path: Path, domain: str, sigma_max: float, extra: dict):
    payload = bytearray()
    tensors, layers = [], []

    def add_tensor(name, t):
        arr = t.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes(order="C"))

    for i, (kind, arg) in enumerate(net.layer_plan()):
        if kind == "conv":
            m = getattr(net, arg)
            transpose = isinstance(m, nn.ConvTranspose2d)
            add_tensor(f"{arg}.weight", m.weight)
            add_tensor(f"{arg}.bias", m.bias)
            cin = m.in_channels
            cout = m.out_channels
            layers.append({
                "name": arg,
                "type": "conv_transpose2d" if transpose else "conv2d",
                "in_channels": cin,
                "out_channels": cout,
                "kernel": m.kernel_size[0],
                "stride": m.stride[0],
                "padding": m.padding[0],
                "weight": f"{arg}.weight",
                "bias": f"{arg}.bias",
            })
        elif kind == "relu":
            layers.append({"name": f"relu{i}", "type": "relu"})
        else:
            layers.append({"name": f"{kind}_{arg}", "type": kind, "slot": arg})

    # The PyTorch module subtracts internally; the archive declares residual
    # prediction, so the engine must see the raw noise estimate.
    header = {
        "domain": domain,
        "in_channels": net.head.in_channels,
        "out_channels": net.cout,
        "prediction": "residual",
        "metadata": {
            "sigma_min": 0.0,
            "sigma_max": sigma_max,
            "normalization": "intensities in [0,1]; noise map channel holds sigma in the same units",
            "extra": {k: str(v) for k, v in extra.items()},
        },
        "layers": layers,
        "tensors": tensors,
    }
    write_container(path, WEIGHTS_MAGIC, header, bytes(payload))


def export_fixture(path: Path, sigma: float, inp: torch.Tensor, out: torch.Tensor, tol: float):
    _, c_in, h, w = inp.shape
    header = {
        "sigma": sigma,
        "height": h,
        "width": w,
        "in_channels": c_in,
        "out_channels": out.shape[1],
        "tolerance": tol,
    }
    payload = inp[0].numpy().astype("<f4").tobytes() + out[0].numpy().astype("<f4").tobytes()
    write_container(path, FIXTURE_MAGIC, header, payload)


def sample_patches(images, n, size, rng):
    out = np.empty((n, 1, size, size), dtype=np.float32)
    for k in range(n):
        img = images[rng.integers(len(images))]
        i = rng.integers(img.shape[0] - size + 1)
        j = rng.integers(img.shape[1] - size + 1)
        p = img[i : i + size, j : j + size]
        p = np.rot90(p, rng.integers(4))
        if rng.integers(2):
            p = p[:, ::-1]
        out[k, 0] = p
    return torch.from_numpy(out)


def make_input(clean_img: torch.Tensor, domain: str, sigma: torch.Tensor, gen: torch.Generator):
    """Noisy network input and clean target for a batch of images."""
    target = grad(clean_img) if domain == "gradient" else clean_img
    noise = torch.randn(target.shape, generator=gen) * sigma.view(-1, 1, 1, 1)
    noisy = target + noise
    sigma_map = sigma.view(-1, 1, 1, 1).expand(-1, 1, *target.shape[2:])
    return torch.cat([noisy, sigma_map], dim=1), target


def psnr_vs(a, b, peak):
    mse = torch.mean((a - b) ** 2).item()
    return 10 * np.log10(peak * peak / mse)


def train(domain, args, train_imgs, valid_imgs):
    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    gen = torch.Generator().manual_seed(args.seed + 1)
    cin, cout = (3, 2) if domain == "gradient" else (2, 1)
    sigma_hi = args.grad_sigma_max if domain == "gradient" else args.image_sigma_max
    net = DeskNet(cin, cout, args.width)
    opt = torch.optim.Adam(net.parameters(), lr=args.lr)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, [int(args.steps * 0.6), int(args.steps * 0.85)], 0.3)

    vgen = torch.Generator().manual_seed(1234)
    vclean = sample_patches(valid_imgs, 32, args.patch, np.random.default_rng(99))
    vsig = torch.full((32,), 25.0 * np.sqrt(2.0) / 255.0 if domain == "gradient" else 25.0 / 255.0)
    vin, vtarget = make_input(vclean, domain, vsig, vgen)

    def validate():
        with torch.no_grad():
            est = net(vin)
        return F.l1_loss(est, vtarget).item(), psnr_vs(est, vtarget, 1.0), psnr_vs(vin[:, :cout], vtarget, 1.0)

    l0 = validate()[0]
    t0 = time.time()
    for step in range(args.steps):
        clean = sample_patches(train_imgs, args.batch, args.patch, rng)
        sigma = torch.rand(args.batch, generator=gen) * sigma_hi
        inp, target = make_input(clean, domain, sigma, gen)
        loss = F.l1_loss(net(inp), target)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if step % 250 == 0 or step == args.steps - 1:
            vl, vp, np_ = validate()
            print(f"[{domain}] step {step:5d} loss {loss.item():.5f} val l1 {vl:.5f} "
                  f"val psnr {vp:.2f} (noisy {np_:.2f}) {time.time() - t0:.0f}s", flush=True)
    vl, vp, np_ = validate()
    print(f"[{domain}] validation l1 {l0:.5f} -> {vl:.5f}; psnr {np_:.2f} -> {vp:.2f} dB", flush=True)
    return net, sigma_hi, {"steps": args.steps, "width": args.width, "patch": args.patch, "batch": args.batch,
                           "seed": args.seed, "val_psnr_noisy": f"{np_:.3f}", "val_psnr_denoised": f"{vp:.3f}"}


def write_fixtures(net, domain, out_dir: Path, valid_imgs, tol, seed):
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    cin = net.head.in_channels
    net.eval()
    n = 0
    sigmas = [10.0 / 255.0, 40.0 / 255.0]
    for sigma in sigmas:
        for _ in range(8):
            clean = sample_patches(valid_imgs, 1, 32, rng)
            inp, _ = make_input(clean, domain, torch.tensor([sigma]), gen)
            with torch.no_grad():
                out = net(inp)
            export_fixture(out_dir / f"{domain}_{n:02d}.apnpfx", sigma, inp, out, tol)
            n += 1
    zero = torch.zeros(1, cin, 16, 16)
    with torch.no_grad():
        out = net(zero)
    export_fixture(out_dir / f"{domain}_zero.apnpfx", 0.0, zero, out, tol)
    return n + 1


def write_tiny(path: Path):
    """1x1 identity-like conv followed by a 3x3 conv: exercises parsing and error paths."""
    w1 = np.zeros((2, 2, 1, 1), dtype="<f4")
    w1[0, 0, 0, 0] = 1.0
    w1[1, 1, 0, 0] = 1.0
    w2 = (np.arange(18, dtype="<f4").reshape(1, 2, 3, 3) - 9.0) / 50.0
    b2 = np.array([0.25], dtype="<f4")
    payload = w1.tobytes() + w2.tobytes() + b2.tobytes()
    header = {
        "domain": "image",
        "in_channels": 2,
        "out_channels": 1,
        "prediction": "direct",
        "metadata": {"sigma_min": 0.0, "sigma_max": 0.2, "normalization": "unit"},
        "layers": [
            {"name": "mix", "type": "conv2d", "in_channels": 2, "out_channels": 2, "kernel": 1,
             "stride": 1, "padding": 0, "weight": "mix.w"},
            {"name": "act", "type": "relu"},
            {"name": "out", "type": "conv2d", "in_channels": 2, "out_channels": 1, "kernel": 3,
             "stride": 1, "padding": 1, "weight": "out.w", "bias": "out.b"},
        ],
        "tensors": [
            {"name": "mix.w", "shape": [2, 2, 1, 1], "offset": 0},
            {"name": "out.w", "shape": [1, 2, 3, 3], "offset": w1.nbytes},
            {"name": "out.b", "shape": [1], "offset": w1.nbytes + w2.nbytes},
        ],
    }
    write_container(path, WEIGHTS_MAGIC, header, payload)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--patch", type=int, default=64)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grad-sigma-max", type=float, default=71.0 / 255.0)
    ap.add_argument("--image-sigma-max", type=float, default=50.0 / 255.0)
    ap.add_argument("--test-size", type=int, default=64)
    ap.add_argument("--domains", default="gradient,image")
    ap.add_argument("--tolerance", type=float, default=1e-4)
    args = ap.parse_args()

    torch.set_num_threads(1)
    args.out.mkdir(parents=True, exist_ok=True)
    write_tiny(args.out / "tiny.apnpw")

    test_dir = args.out / "testset"
    test_dir.mkdir(exist_ok=True)
    s = args.test_size
    for name, top, left in TEST_CROPS:
        crop = quantize(load_gray(name)[top : top + s, left : left + s])
        Image.fromarray(crop, mode="L").save(test_dir / f"{name}.png")

    train_imgs = [load_gray(n) for n in TRAIN_IMAGES]
    valid_imgs = [load_gray(n) for n in VALID_IMAGES]
    for domain in args.domains.split(","):
        net, sigma_hi, extra = train(domain, args, train_imgs, valid_imgs)
        export_archive(net, args.out / f"{domain}.apnpw", domain, sigma_hi, extra)
        n = write_fixtures(net, domain, args.out / "fixtures", valid_imgs, args.tolerance, args.seed + 7)
        print(f"[{domain}] wrote archive and {n} fixtures", flush=True)


if __name__ == "__main__":
    main()
