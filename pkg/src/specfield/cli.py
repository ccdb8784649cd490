"""Command line interface: convert, synth, fit, train-encoder, generate,
render, eval and ablate.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (missing or
malformed files, inconsistent shapes, out-of-range wavelengths).  All config
and scene files are JSON objects; command line flags override config-file
values, and unknown keys or flags are rejected.

Heavy imports happen inside the subcommand handlers so that the
SPECFIELD_THREADS environment variable can cap BLAS threading before numpy
first loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

# reduced defaults for the built-in fusion comparison; full-size runs go
# through `fit` with an explicit config
ABLATE_DIMS = (45, 45, 90)
ABLATE_BANDS = 13


class UsageError(Exception):
    """Bad flags or arguments; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse would sys.exit(2); usage problems must exit 1 instead
        raise UsageError(message)


class _Formatter(argparse.ArgumentDefaultsHelpFormatter,
                 argparse.RawDescriptionHelpFormatter):
    pass


def _cap_threads() -> None:
    """Apply SPECFIELD_THREADS before numpy first loads its BLAS."""
    cap = os.environ.get("SPECFIELD_THREADS")
    if not cap:
        return
    try:
        n = int(cap)
    except ValueError:
        raise UsageError(f"SPECFIELD_THREADS must be an integer, got {cap!r}")
    if n < 1:
        raise UsageError("SPECFIELD_THREADS must be >= 1")
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(n))


# ---------------------------------------------------------------------------
# shared helpers

def _load_json(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})")
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return raw


def _check_keys(raw: dict, allowed, label: str) -> None:
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ValueError(f"{label}: unknown keys {sorted(unknown)}")


_CONFIG_FLAGS = ("channels", "fusion", "learning_rate", "batch_size",
                 "epochs", "halve_every", "samples_per_material",
                 "tv_weight", "seed")


def _build_config(args):
    """Training config from an optional JSON file plus flag overrides."""
    from .trainer import TrainConfig

    values = _load_json(args.config) if getattr(args, "config", None) else {}
    for name in _CONFIG_FLAGS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrainConfig.from_json(json.dumps(values))


def _add_config_flags(p) -> None:
    p.add_argument("--config", metavar="JSON",
                   help="training config file (TrainConfig fields)")
    p.add_argument("--channels", type=int, help="feature channels per plane")
    p.add_argument("--fusion", choices=["aff", "hadamard"],
                   help="feature mixing mode")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--halve-every", dest="halve_every", type=int,
                   help="epochs between learning-rate halvings")
    p.add_argument("--samples-per-material", dest="samples_per_material",
                   type=int, help="query points drawn per material per epoch")
    p.add_argument("--tv-weight", dest="tv_weight", type=float,
                   help="plane smoothness penalty weight")
    p.add_argument("--seed", type=int, help="seed for all stochastic stages")


def _load_preview(path):
    """(3, 64, 64) network input from a color pfm."""
    import numpy as np

    from .images import read_pfm

    img = read_pfm(path)
    if img.ndim != 3:
        raise ValueError(f"{path}: preview must be a color pfm, got grayscale")
    return np.transpose(img, (2, 0, 1))


def _load_source(path):
    """Reflectance source for rendering: fitted model or raw table.

    Dispatches on the file magic; returns (source, wavelength axis).
    """
    from .brdf_io import SBRD_MAGIC, FormatError, read_sbrd
    from .trainer import MODEL_MAGIC, load_model

    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == MODEL_MAGIC:
        model, _ = load_model(path)
        if model.planes is None:
            raise ValueError(
                f"{path}: file holds shared heads only; run generate first")
        return model, model.planes.axis
    if magic == SBRD_MAGIC:
        table = read_sbrd(path)
        return table, table.axis
    raise FormatError(f"{path}: neither a model nor a spectral table file")


def _load_scene(path):
    """Scene JSON -> (RenderScene, png exposure).

    Schema: {"geometry": "sphere" | {"obj": path},
             "light": {"type": "distant", "direction": [x, y, z],
                       "irradiance": E}
                    | {"type": "environment", "pfm": path, "scale": s}
                    | {"type": "environment", "constant": v,
                       "rows": He, "cols": We, "scale": s},
             "wavelengths": [nm, ...], "width": W, "height": H,
             "exposure": e}
    Every key is optional; defaults render a 64x64 sphere under the fixed
    preview light at nine wavelengths.
    """
    import numpy as np

    from .render import DistantLight, EnvironmentLight, RenderScene, load_obj

    raw = _load_json(path)
    _check_keys(raw, {"geometry", "light", "wavelengths", "width", "height",
                      "exposure"}, str(path))

    geometry = raw.get("geometry", "sphere")
    if isinstance(geometry, dict):
        _check_keys(geometry, {"obj"}, f"{path}: geometry")
        if "obj" not in geometry:
            raise ValueError(f"{path}: geometry object needs an \"obj\" path")
        geometry = load_obj(geometry["obj"])

    light = None
    lraw = raw.get("light")
    if lraw is not None:
        ltype = lraw.get("type")
        if ltype == "distant":
            _check_keys(lraw, {"type", "direction", "irradiance"},
                        f"{path}: light")
            light = DistantLight(
                np.asarray(lraw.get("direction", [0.0, 0.0, 1.0]), float),
                float(lraw.get("irradiance", 1.0)))
        elif ltype == "environment":
            _check_keys(lraw, {"type", "pfm", "constant", "rows", "cols",
                               "scale"}, f"{path}: light")
            if "pfm" in lraw:
                from .images import read_pfm

                radiance = read_pfm(lraw["pfm"])
                if radiance.ndim == 3:
                    radiance = radiance.mean(axis=2)
            elif "constant" in lraw:
                radiance = np.full((int(lraw.get("rows", 16)),
                                    int(lraw.get("cols", 32))),
                                   float(lraw["constant"]))
            else:
                raise ValueError(
                    f"{path}: environment light needs \"pfm\" or \"constant\"")
            light = EnvironmentLight(radiance, float(lraw.get("scale", 1.0)))
        else:
            raise ValueError(f"{path}: unknown light type {ltype!r}")

    kwargs = {"geometry": geometry, "light": light}
    if "wavelengths" in raw:
        kwargs["wavelengths"] = [float(v) for v in raw["wavelengths"]]
    if "width" in raw:
        kwargs["width"] = int(raw["width"])
    if "height" in raw:
        kwargs["height"] = int(raw["height"])
    return RenderScene(**kwargs), float(raw.get("exposure", 1.0))


# ---------------------------------------------------------------------------
# subcommands

def cmd_convert(args) -> int:
    from .brdf_io import parse_merl

    brdf = parse_merl(args.merl)
    valid = brdf.valid
    stats = {
        "source": str(args.merl),
        "dims": list(brdf.table.shape[1:]),
        "valid_fraction": float(valid.mean()),
        "channels": {},
    }
    for ci, name in enumerate(("red", "green", "blue")):
        vals = brdf.table[ci][valid]
        stats["channels"][name] = {
            "min": float(vals.min()) if vals.size else None,
            "max": float(vals.max()) if vals.size else None,
            "mean": float(vals.mean()) if vals.size else None,
        }
    Path(args.out).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(f"{args.merl}: {'x'.join(map(str, stats['dims']))} grid, "
          f"{100.0 * stats['valid_fraction']:.1f}% valid bins -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .brdf_io import SyntheticSpec, synth_spectral, write_sbrd
    from .coords import WavelengthAxis

    raw = _load_json(args.spec)
    _check_keys(raw, {"material", "axis", "dims", "name"}, str(args.spec))
    mat_raw = raw.get("material", {})
    _check_keys(mat_raw, SyntheticSpec.__dataclass_fields__,
                f"{args.spec}: material")
    axis_raw = raw.get("axis", {})
    _check_keys(axis_raw, {"lam_min", "lam_max", "count"}, f"{args.spec}: axis")
    dims = tuple(int(v) for v in raw.get("dims", (90, 90, 180)))
    if len(dims) != 3:
        raise ValueError(f"{args.spec}: dims must have three entries")

    table = synth_spectral(SyntheticSpec(**mat_raw), WavelengthAxis(**axis_raw),
                           dims=dims, name=str(raw.get("name", "synthetic")))
    write_sbrd(table, args.out)
    print(f"{table.name}: {table.axis.count} bands x "
          f"{'x'.join(map(str, dims))} grid -> {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .brdf_io import merl_grayscale, parse_merl, read_sbrd
    from .trainer import MaterialData, fit, model_table_psnr, save_model

    cfg = _build_config(args)
    table = read_sbrd(args.sbrd)
    materials = [MaterialData(spectral=table)]
    if args.merl:
        files = sorted(Path(args.merl).glob("*.binary"))
        if not files:
            raise ValueError(f"{args.merl}: no .binary files found")
        for f in files:
            brdf = parse_merl(f)
            materials.append(
                MaterialData(panchromatic=(merl_grayscale(brdf), brdf.valid)))
    result = fit(materials, cfg, axis=table.axis)
    save_model(result.models[0], args.out)
    report = model_table_psnr(result.models[0], table, stride=(3, 3, 6))
    print(f"fit {table.name or args.sbrd}: {len(materials)} material(s), "
          f"{len(result.history)} steps, "
          f"mean psnr {report['mean_psnr']:.2f} dB -> {args.out}")
    return EXIT_OK


def cmd_train_encoder(args) -> int:
    from .brdf_io import read_sbrd
    from .encoder import EncoderPair, save_encoder_fit, train_encoder

    try:
        raw = json.loads(Path(args.pairs).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{args.pairs}: invalid JSON ({e})")
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{args.pairs}: expected a non-empty JSON array")
    pairs = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or "table" not in entry:
            raise ValueError(f"{args.pairs}[{i}]: entries need a \"table\" path")
        _check_keys(entry, {"table", "image"}, f"{args.pairs}[{i}]")
        table = read_sbrd(entry["table"])
        if "image" in entry:
            image = _load_preview(entry["image"])
        else:
            from .render import render_preview

            image = render_preview(table)
        pairs.append(EncoderPair(image=image, table=table))

    cfg = _build_config(args)
    result = train_encoder(pairs, cfg, steps=args.steps)
    save_encoder_fit(result, args.out)
    last = result.history[-1]["loss"] if result.history else float("nan")
    print(f"trained on {len(pairs)} material(s), {len(result.history)} steps, "
          f"final loss {last:.6g} -> {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .encoder import load_encoder_fit
    from .trainer import save_model

    bundle = load_encoder_fit(args.encoder)
    model = bundle.model_for(_load_preview(args.image))
    save_model(model, args.out)
    d1, d2, d3 = bundle.dims
    print(f"generated {d1}x{d2}x{d3} plane model, "
          f"{model.channels} channels -> {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .images import write_pfm, write_png
    from .render import render

    source, axis = _load_source(args.model)
    scene, exposure = _load_scene(args.scene)
    if args.exposure is not None:
        exposure = args.exposure
    for lam in scene.wavelengths:
        if lam < axis.lam_min or lam > axis.lam_max:
            raise ValueError(
                f"wavelength {lam:g} nm outside the source range "
                f"[{axis.lam_min:g}, {axis.lam_max:g}] nm")
    image = render(scene, source)
    for lam, plane in zip(image.wavelengths, image.planes):
        stem = f"{args.out}_{lam:g}nm"
        write_pfm(stem + ".pfm", plane)
        write_png(stem + ".png", plane, exposure)
        print(f"wrote {stem}.pfm / .png")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .images import read_pfm
    from .metrics import psnr, ssim

    dir_a, dir_b = Path(args.a), Path(args.b)
    names = [p.name for p in sorted(dir_a.glob("*.pfm"))
             if (dir_b / p.name).is_file()]
    if not names:
        raise ValueError(f"no matching .pfm files between {args.a} and {args.b}")
    rows = []
    for name in names:
        a = read_pfm(dir_a / name)
        b = read_pfm(dir_b / name)
        if a.shape != b.shape:
            raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
        p = psnr(a, b)
        if a.ndim == 3:
            s = float(np.mean([ssim(a[..., c], b[..., c]) for c in range(3)]))
        else:
            s = ssim(a, b)
        rows.append({"name": name, "psnr_db": p, "ssim": s})
        print(f"{name}: psnr {p:.2f} dB, ssim {s:.4f}")
    report = {
        "a": str(args.a),
        "b": str(args.b),
        "pairs": rows,
        "mean_psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
    }
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"mean psnr {report['mean_psnr_db']:.2f} dB, "
          f"mean ssim {report['mean_ssim']:.4f} -> {args.report}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .brdf_io import SyntheticSpec, synth_spectral
    from .coords import WavelengthAxis
    from .trainer import TrainConfig, fit, model_table_psnr

    axis = WavelengthAxis(400.0, 1000.0, ABLATE_BANDS)
    table = synth_spectral(SyntheticSpec(), axis, dims=ABLATE_DIMS,
                           name="ablate-default")
    modes = ["aff", "hadamard"] if args.fusion == "both" else [args.fusion]
    results = {}
    print(f"{'fusion':<10}{'mean psnr':>12}")
    for mode in modes:
        cfg = TrainConfig(
            channels=args.channels, fusion=mode,
            learning_rate=args.learning_rate, batch_size=args.batch_size,
            epochs=args.epochs, halve_every=args.halve_every,
            samples_per_material=args.samples_per_material, seed=args.seed)
        fitted = fit(table, cfg)
        stats = model_table_psnr(fitted.models[0], table,
                                 stride=(1, 1, 2))
        results[mode] = stats["mean_psnr"]
        print(f"{mode:<10}{results[mode]:>9.2f} dB")
    if len(results) == 2:
        print(f"aff - hadamard: {results['aff'] - results['hadamard']:+.2f} dB")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> _Parser:
    parser = _Parser(prog="specfield",
                     description=__doc__,
                     formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("convert", formatter_class=_Formatter,
                       help="parse a measured binary table and dump stats",
                       description="Parse a measured 90x90x180 RGB table and "
                                   "write a JSON stats summary.")
    p.add_argument("--merl", required=True, metavar="BINARY",
                   help="input .binary reflectance table")
    p.add_argument("--out", required=True, metavar="JSON",
                   help="output stats file")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", formatter_class=_Formatter,
                       help="tabulate an analytic material to a .sbrd file",
                       description="Spec JSON schema: {\"material\": "
                                   "{SyntheticSpec fields}, \"axis\": "
                                   "{lam_min, lam_max, count}, \"dims\": "
                                   "[D1, D2, D3], \"name\": str}; all "
                                   "keys optional.")
    p.add_argument("--spec", required=True, metavar="JSON",
                   help="material description file")
    p.add_argument("--out", required=True, metavar="SBRD",
                   help="output spectral table")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", formatter_class=_Formatter,
                       help="optimize a plane model against a spectral table",
                       description="Fit plane stacks plus mixing and decoding "
                                   "heads to a .sbrd table.  With --merl, "
                                   "every .binary in the directory joins "
                                   "training as a panchromatic material "
                                   "sharing the heads.")
    p.add_argument("--sbrd", required=True, metavar="SBRD",
                   help="spectral reflectance table to fit")
    p.add_argument("--merl", metavar="DIR",
                   help="directory of .binary tables for co-training")
    p.add_argument("--out", required=True, metavar="SSTA",
                   help="output model file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train-encoder", formatter_class=_Formatter,
                       help="train the image-to-planes generator",
                       description="Pairs JSON schema: [{\"table\": sbrd-path, "
                                   "\"image\": pfm-path?}, ...].  Entries "
                                   "without an image get a sphere preview "
                                   "rendered from their table.")
    p.add_argument("--pairs", required=True, metavar="JSON",
                   help="list of preview/table pairs")
    p.add_argument("--out", required=True, metavar="SSTA",
                   help="output bundle (conv weights + shared heads)")
    p.add_argument("--steps", type=int, default=2000,
                   help="optimization steps")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("generate", formatter_class=_Formatter,
                       help="predict a plane model from a preview image",
                       description="Run a trained generator bundle on a 64x64 "
                                   "color pfm preview and save the resulting "
                                   "plane model.")
    p.add_argument("--encoder", required=True, metavar="SSTA",
                   help="bundle written by train-encoder")
    p.add_argument("--image", required=True, metavar="PFM",
                   help="64x64 color preview image")
    p.add_argument("--out", required=True, metavar="SSTA",
                   help="output model file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("render", formatter_class=_Formatter,
                       help="render a model or table under a JSON scene",
                       description=_load_scene.__doc__ +
                                   "\nWrites PREFIX_<lambda>nm.pfm and .png "
                                   "per wavelength.")
    p.add_argument("--model", required=True, metavar="FILE",
                   help=".ssta model or .sbrd table to shade with")
    p.add_argument("--scene", required=True, metavar="JSON",
                   help="scene description file")
    p.add_argument("--out", required=True, metavar="PREFIX",
                   help="output path prefix")
    p.add_argument("--exposure", type=float,
                   help="png tonemap exposure (overrides the scene value)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", formatter_class=_Formatter,
                       help="compare two directories of rendered .pfm images",
                       description="Match .pfm files by name, compute psnr "
                                   "and ssim per pair (b is the reference) "
                                   "and write a JSON report.")
    p.add_argument("--a", required=True, metavar="DIR", help="test images")
    p.add_argument("--b", required=True, metavar="DIR",
                   help="reference images")
    p.add_argument("--report", required=True, metavar="JSON",
                   help="output report file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", formatter_class=_Formatter,
                       help="compare fusion modes on a synthetic material",
                       description="Fit the default synthetic material with "
                                   "attention-based and product fusion at "
                                   "reduced size and print one psnr row per "
                                   "mode.")
    p.add_argument("--fusion", choices=["aff", "hadamard", "both"],
                   default="both", help="which mode(s) to run")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   default=1e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=8192)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--halve-every", dest="halve_every", type=int, default=4)
    p.add_argument("--samples-per-material", dest="samples_per_material",
                   type=int, default=131072)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        _cap_threads()
        parser = build_parser()
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        print("run 'specfield --help' for the command list", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
