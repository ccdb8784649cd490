"""Overfit the image-to-planes generator on a small material set.

Direct fits give a per-material quality ceiling: each material gets its own
planes optimized against its table.  The generator is then trained on
(preview image, table) pairs to emit planes from images alone, sharing one
decoder across materials.  The report compares sphere-render PSNR of the
generated models against the direct fits; the interesting number is the
worst per-material gap.

Budgets default to a reduced table size so the whole comparison runs in a
few minutes on one core.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from specfield.brdf_io import SyntheticSpec, synth_spectral
from specfield.coords import WavelengthAxis
from specfield.encoder import EncoderPair, train_encoder
from specfield.metrics import psnr
from specfield.render import RenderScene, render, render_preview
from specfield.trainer import TrainConfig, eval_wavelengths, fit


def mean_render_psnr(source, scene: RenderScene, ref) -> float:
    img = render(scene, source)
    vals = [psnr(p, r, peak=float(r.max()))
            for p, r in zip(img.planes, ref.planes)]
    return float(np.mean(vals))


def material_set(axis: WavelengthAxis, dims: tuple[int, int, int]):
    specs = [
        SyntheticSpec(),
        SyntheticSpec(diffuse_peak=0.45, diffuse_center=470.0,
                      diffuse_width=60.0, spec_strength=0.5,
                      spec_exponent=40.0, spec_tilt=-0.0004),
    ]
    return [synth_spectral(s, axis, dims=dims, name=f"mat{i}")
            for i, s in enumerate(specs)]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs=3, default=(45, 45, 90))
    ap.add_argument("--bands", type=int, default=13)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--direct-lr", type=float, default=1e-3)
    ap.add_argument("--direct-steps", type=int, default=600)
    ap.add_argument("--encoder-lr", type=float, default=1e-3)
    ap.add_argument("--encoder-steps", type=int, default=3000)
    ap.add_argument("--encoder-batch", type=int, default=512)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--render-size", type=int, default=64)
    args = ap.parse_args()

    axis = WavelengthAxis(count=args.bands)
    tables = material_set(axis, tuple(args.dims))
    scene = RenderScene(width=args.render_size, height=args.render_size,
                        wavelengths=eval_wavelengths(axis))
    refs = [render(scene, t) for t in tables]

    direct = []
    for table, ref in zip(tables, refs):
        cfg = TrainConfig(channels=args.channels,
                          learning_rate=args.direct_lr, batch_size=1024,
                          epochs=1, halve_every=1000,
                          samples_per_material=1024 * args.direct_steps,
                          seed=args.seed)
        t0 = time.time()
        result = fit(table, cfg)
        val = mean_render_psnr(result.models[0], scene, ref)
        direct.append(val)
        print(f"direct {table.name}: psnr {val:6.2f} dB "
              f"({time.time() - t0:.0f}s)", flush=True)

    pairs = [EncoderPair(image=render_preview(t), table=t) for t in tables]
    enc_cfg = TrainConfig(channels=args.channels,
                          learning_rate=args.encoder_lr,
                          batch_size=args.encoder_batch, seed=args.seed)
    t0 = time.time()

    def progress(step: int, loss_val: float) -> bool:
        if (step + 1) % 200 == 0:
            print(f"encoder step {step + 1:5d}  loss {loss_val:.5f}  "
                  f"({time.time() - t0:.0f}s)", flush=True)
        return False

    fit_result = train_encoder(pairs, enc_cfg, steps=args.encoder_steps,
                               callback=progress)

    worst = 0.0
    for pair, ref, d in zip(pairs, refs, direct):
        model = fit_result.model_for(pair.image)
        val = mean_render_psnr(model, scene, ref)
        gap = d - val
        worst = max(worst, gap)
        print(f"generated {pair.table.name}: psnr {val:6.2f} dB "
              f"(direct {d:6.2f}, gap {gap:+.2f})")
    print(f"\nworst gap {worst:+.2f} dB")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
