"""Sparse spectral supervision with and without a panchromatic channel.

Simulates the capture setup where a spectrometer measures full spectra only
near the incidence plane while a grayscale camera table covers every bin.
The material's lobe dims away from the incidence plane, so the in-plane
spectra alone cannot pin down the difference-azimuth structure; the dense
grayscale table can, through the shared angle planes.

Two arms per seed: spectral samples restricted to the sparse subset alone,
then the same subset plus grayscale samples over the whole table routed
through the collapsed wavelength planes.  Both arms share seeds, budgets
and schedules; the report is sphere-render PSNR against the dense table.
The grayscale target is the per-bin mean of the table over wavelength.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from specfield.brdf_io import SyntheticSpec, synth_spectral
from specfield.coords import WavelengthAxis
from specfield.metrics import psnr
from specfield.render import RenderScene, render
from specfield.trainer import (MaterialData, TrainConfig, eval_wavelengths,
                               fit)


def mean_render_psnr(source, scene: RenderScene, ref) -> float:
    img = render(scene, source)
    vals = [psnr(p, r, peak=float(r.max()))
            for p, r in zip(img.planes, ref.planes)]
    return float(np.mean(vals))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs=3, default=(45, 45, 90))
    ap.add_argument("--bands", type=int, default=13)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--exponent", type=float, default=20.0,
                    help="specular lobe sharpness")
    ap.add_argument("--phi-depth", type=float, default=0.8,
                    help="azimuthal dimming of the lobe, 0 disables")
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--batch-size", type=int, default=1024)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--fraction", type=int, default=100,
                    help="keep one spectral bin in this many")
    ap.add_argument("--subset-seed", type=int, default=9)
    ap.add_argument("--seeds", type=int, nargs="+", default=(0, 1, 2))
    ap.add_argument("--render-size", type=int, default=64)
    args = ap.parse_args()

    axis = WavelengthAxis(count=args.bands)
    table = synth_spectral(
        SyntheticSpec(spec_exponent=args.exponent,
                      lobe_phi_depth=args.phi_depth),
        axis=axis, dims=tuple(args.dims))
    scene = RenderScene(width=args.render_size, height=args.render_size,
                        wavelengths=eval_wavelengths(axis))
    ref = render(scene, table)

    # spectral samples only near the incidence plane, trimmed to the target
    # fraction; the grayscale table covers everything
    inplane = np.zeros(table.table.shape, dtype=bool)
    inplane[:, :, :, 0] = True
    inplane[:, :, :, -1] = True
    pool = np.flatnonzero(inplane)
    keep = table.table.size // args.fraction
    if keep > pool.size:
        raise SystemExit(f"fraction 1/{args.fraction} needs {keep} bins but "
                         f"only {pool.size} are in-plane")
    subset = np.random.default_rng(args.subset_seed).choice(
        pool, size=keep, replace=False)
    gray = table.table.astype(np.float64).mean(axis=0)
    valid = np.ones(gray.shape, dtype=bool)
    print(f"subset {subset.size}/{table.table.size} spectral bins "
          f"({pool.size} in-plane)", flush=True)

    scores: dict[bool, list[float]] = {False: [], True: []}
    for seed in args.seeds:
        for with_aux in (False, True):
            mat = MaterialData(
                spectral=table,
                panchromatic=(gray, valid) if with_aux else None,
                bin_subset=subset,
            )
            cfg = TrainConfig(
                channels=args.channels, learning_rate=args.lr,
                batch_size=args.batch_size, epochs=1, halve_every=1000,
                samples_per_material=args.batch_size * args.steps,
                seed=seed,
            )
            t0 = time.time()
            result = fit([mat], cfg, axis=axis)
            val = mean_render_psnr(result.models[0], scene, ref)
            scores[with_aux].append(val)
            tag = "with-aux" if with_aux else "sparse"
            print(f"{tag:8s} seed {seed}  steps {args.steps:5d}  "
                  f"psnr {val:6.2f} dB  ({time.time() - t0:.0f}s)",
                  flush=True)

    aux = np.array(scores[True])
    only = np.array(scores[False])
    print(f"\nsparse   mean {only.mean():6.2f} dB  (per seed: "
          + " ".join(f"{v:.2f}" for v in only) + ")")
    print(f"with-aux mean {aux.mean():6.2f} dB  (per seed: "
          + " ".join(f"{v:.2f}" for v in aux) + ")")
    print(f"margin   {aux.mean() - only.mean():+.2f} dB")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
