"""Fit one synthetic spectral material and track render quality.

Single-material baseline run: builds an analytic spectral table at MERL
angular resolution, optimizes a field against it, and reports sphere-render
PSNR after every epoch.  PSNR is measured over a small set of evenly spaced
wavelengths against a reference render of the table itself, with each
wavelength plane scored against the reference peak.

Typical invocation (full-size table, about five minutes per 500 steps on
one core):

    python3 scripts/fit_synthetic.py --epochs 15 --out runs/synth.ssta
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from specfield.brdf_io import SyntheticSpec, synth_spectral
from specfield.coords import WavelengthAxis
from specfield.fusion import FusionMode
from specfield.images import write_png
from specfield.metrics import psnr
from specfield.render import RenderScene, render, render_preview
from specfield.trainer import TrainConfig, eval_wavelengths, fit, save_model


def mean_render_psnr(source, scene: RenderScene, ref) -> float:
    """Average per-wavelength PSNR of a render against a reference render."""
    img = render(scene, source)
    vals = [psnr(p, r, peak=float(r.max()))
            for p, r in zip(img.planes, ref.planes)]
    return float(np.mean(vals))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs=3, default=(90, 90, 180),
                    metavar=("TH", "TD", "PD"), help="angular bin counts")
    ap.add_argument("--bands", type=int, default=39, help="wavelength bins")
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--fusion", choices=[m.value for m in FusionMode],
                    default=FusionMode.AFF.value)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--batch-size", type=int, default=1024)
    ap.add_argument("--steps-per-epoch", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--halve-every", type=int, default=1000,
                    help="epochs between learning-rate halvings")
    ap.add_argument("--tv-weight", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--render-size", type=int, default=64)
    ap.add_argument("--eval-bands", type=int, default=9,
                    help="wavelengths scored in the render metric")
    ap.add_argument("--out", type=Path, default=None,
                    help="save the fitted model container here")
    ap.add_argument("--preview", type=Path, default=None,
                    help="write an RGB preview PNG of the fitted model")
    args = ap.parse_args()

    axis = WavelengthAxis(count=args.bands)
    table = synth_spectral(SyntheticSpec(), axis=axis, dims=tuple(args.dims))
    scene = RenderScene(width=args.render_size, height=args.render_size,
                        wavelengths=eval_wavelengths(axis, args.eval_bands))
    ref = render(scene, table)

    cfg = TrainConfig(
        channels=args.channels,
        fusion=FusionMode(args.fusion),
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        halve_every=args.halve_every,
        samples_per_material=args.batch_size * args.steps_per_epoch,
        tv_weight=args.tv_weight,
        seed=args.seed,
    )

    t0 = time.time()

    def report(epoch: int, result) -> bool:
        steps = (epoch + 1) * args.steps_per_epoch
        val = mean_render_psnr(result.models[0], scene, ref)
        loss = result.history[-1]["total"]
        print(f"epoch {epoch:3d}  steps {steps:6d}  loss {loss:.5f}  "
              f"render psnr {val:6.2f} dB  ({time.time() - t0:.0f}s)",
              flush=True)
        return False

    result = fit(table, cfg, callback=report)
    model = result.models[0]

    final = mean_render_psnr(model, scene, ref)
    print(f"final render psnr {final:.2f} dB over {args.eval_bands} bands")

    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_model(args.out, model, cfg)
        print(f"model written to {args.out}")
    if args.preview is not None:
        args.preview.parent.mkdir(parents=True, exist_ok=True)
        write_png(args.preview, render_preview(model, size=args.render_size))
        print(f"preview written to {args.preview}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
