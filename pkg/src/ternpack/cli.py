"""Command-line front end.

Subcommands: quantize, dequantize, eval, inspect, synth. Exit codes:
0 success, 1 partial layer failure, 2 invalid invocation. Log level comes
from PT2_LOG={error,info,debug} (default error). Human-readable lines go to
stdout; machine-readable JSON (and per-block CSV) are always written next
to the artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import TernpackError
from .pipeline import (
    CalibGram,
    QuantConfig,
    accumulate_gram,
    gram_output_error,
    quantize_model,
)
from .synth import SynthSpec, generate_dataset
from .tensorio import (
    LayerManifest,
    load_calibration,
    load_manifest,
    load_tensor,
    read_packed,
)
from .ternary import dequantize, weight_error

EXIT_OK = 0
EXIT_LAYER_FAILURE = 1
EXIT_USAGE = 2

# eval flags a quantize-time/recomputed metric gap beyond this
EVAL_MATCH_RTOL = 1e-6

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("PT2_LOG", "error").lower(),
                                         logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _config_from_args(args) -> QuantConfig:
    return QuantConfig(
        group_size=args.group_size,
        damp_frac=args.damp_frac,
        max_itf_iters=args.max_itf_iters,
        use_ssr=not args.no_ssr,
        use_aga=not args.no_aga,
        use_itf=not args.no_itf,
        use_compensation=not args.no_compensation,
        scale_dtype=args.scale_dtype,
        identity_gram_fallback=args.allow_identity_gram,
    )


def _merge_calib(manifest: LayerManifest, calib_path: str | None) -> LayerManifest:
    """Overlay calib_path entries from an alternate manifest, matched by name."""
    if calib_path is None:
        return manifest
    alt = load_manifest(calib_path)
    by_name = {e.name: e for e in alt.entries}
    entries = []
    for e in manifest.entries:
        other = by_name.get(e.name)
        if other is not None and other.calib_path is not None:
            rel = os.path.relpath(alt.root / other.calib_path, manifest.root)
            entries.append(replace(e, calib_path=rel))
        else:
            entries.append(e)
    return LayerManifest(root=manifest.root, entries=entries)


def _write_block_csv(out_dir: Path, layer: str, variances) -> None:
    with open(out_dir / f"{layer}.blocks.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block_index", "variance"])
        for i, v in enumerate(variances):
            writer.writerow([i, repr(float(v))])


def cmd_quantize(args) -> int:
    try:
        manifest = _merge_calib(load_manifest(args.manifest), args.calib)
        cfg = _config_from_args(args)
    except (TernpackError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    model = quantize_model(manifest, cfg, out_dir, jobs=args.jobs)
    for rep in model.layers:
        print(f"{rep.layer}: {rep.n}x{rep.m} k={rep.k} e_w={rep.e_w:.6g} "
              f"e_x={rep.e_x_gram:.6g} bits/weight={rep.bits_per_weight:.3f} "
              f"(total {rep.bits_per_weight_total:.3f}) "
              f"itf_iters={rep.itf_iters_mean:.1f}"
              f"{' [identity gram]' if rep.gram_identity else ''}")
        _write_block_csv(out_dir, rep.layer, rep.block_variance)
    for fail in model.failures:
        print(f"{fail['layer']}: FAILED: {fail['error']}", file=sys.stderr)
    if model.size_reduction_vs_f32 is not None:
        print(f"total: {model.total_params} weights in {model.total_file_bytes} bytes "
              f"({model.bits_per_weight_overall:.3f} bits/weight), "
              f"{model.size_reduction_vs_f32:.2f}x smaller than f32, "
              f"{model.size_reduction_vs_f16:.2f}x smaller than f16")
    if args.report == "csv":
        _write_report_csv(out_dir, model)
    return EXIT_OK if model.ok else EXIT_LAYER_FAILURE


def _write_report_csv(out_dir: Path, model) -> None:
    fields = ["layer", "n", "m", "k", "e_w", "e_x_gram", "bits_per_weight",
              "itf_iters_mean", "blocks", "ssr", "aga"]
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rep in model.layers:
            d = rep.to_dict()
            writer.writerow([d[f] for f in fields])


def cmd_dequantize(args) -> int:
    try:
        packed = read_packed(args.packed)
    except TernpackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LAYER_FAILURE
    w_hat = dequantize(packed)
    out_dtype = "<f4" if args.dtype == "f32" else "<f8"
    w_hat.astype(out_dtype).tofile(args.out)
    n, m = packed.shape
    print(f"wrote {args.out}: {n}x{m} {args.dtype}, group_size={packed.group_size}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        manifest = _merge_calib(load_manifest(args.manifest), args.calib)
    except TernpackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    packed_dir = Path(args.packed_dir)
    quantize_report = {}
    report_path = packed_dir / "report.json"
    if report_path.is_file():
        doc = json.loads(report_path.read_text())
        quantize_report = {r["layer"]: r for r in doc.get("layers", [])}

    results = []
    failures = []
    for name in manifest.names():
        try:
            results.append(_eval_layer(manifest, packed_dir, name, quantize_report))
        except (TernpackError, OSError) as exc:
            failures.append({"layer": name, "error": str(exc)})
            print(f"{name}: FAILED: {exc}", file=sys.stderr)
    for r in results:
        flag = "" if r["matches_quantize_report"] in (True, None) else " MISMATCH"
        print(f"{r['layer']}: e_w={r['e_w']:.6g} e_x={r['e_x_gram']:.6g} "
              f"bits/weight={r['bits_per_weight']:.3f}{flag}")
    out = {"layers": results, "failures": failures}
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if not failures else EXIT_LAYER_FAILURE


def _eval_layer(manifest: LayerManifest, packed_dir: Path, name: str,
                quantize_report: dict) -> dict:
    w = load_tensor(manifest, name)
    packed = read_packed(packed_dir / f"{name}.pt2t")
    if packed.shape != w.shape:
        raise TernpackError(
            f"packed shape {packed.shape} does not match manifest {w.shape}")
    w_hat = dequantize(packed)
    e_w = weight_error(w, w_hat)
    calib = load_calibration(manifest, name)
    if calib is not None:
        gram = accumulate_gram(CalibGram.zeros(w.shape[1]), calib).gram
        gram = 0.5 * (gram + gram.T)
        identity = False
    else:
        gram = np.eye(w.shape[1])
        identity = True
    e_x = gram_output_error(w, w_hat, gram)
    result = {
        "layer": name,
        "e_w": e_w,
        "e_x_gram": e_x,
        "bits_per_weight": packed.payload_bits_per_weight(),
        "gram_identity": identity,
        "matches_quantize_report": None,
        "max_rel_diff": None,
    }
    prev = quantize_report.get(name)
    if prev is not None:
        diffs = [_rel_diff(prev["e_w"], e_w),
                 _rel_diff(prev["e_x_gram"], e_x),
                 _rel_diff(prev["bits_per_weight"], result["bits_per_weight"])]
        result["max_rel_diff"] = max(diffs)
        result["matches_quantize_report"] = result["max_rel_diff"] <= EVAL_MATCH_RTOL
        if not result["matches_quantize_report"]:
            logger.warning("%s: recomputed metrics deviate from quantize-time "
                           "report (max rel diff %.3e)", name, result["max_rel_diff"])
    return result


def _rel_diff(a: float, b: float) -> float:
    denom = max(abs(a), abs(b), np.finfo(np.float64).tiny)
    return abs(a - b) / denom


def cmd_inspect(args) -> int:
    try:
        packed = read_packed(args.packed)
    except TernpackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LAYER_FAILURE
    n, m = packed.shape
    trits = packed.trits()
    counts = {int(v): int(c) for v, c in
              zip(*np.unique(trits, return_counts=True))}
    print(f"file:          {args.packed}")
    print(f"shape:         {n} x {m}")
    print(f"group_size:    {packed.group_size} ({packed.n_groups} groups)")
    print(f"scale_dtype:   {packed.scale_dtype}")
    print(f"payload:       {len(packed.payload)} bytes "
          f"({packed.payload_bits_per_weight():.3f} bits/weight)")
    print(f"trit counts:   -1: {counts.get(-1, 0)}  0: {counts.get(0, 0)}  "
          f"+1: {counts.get(1, 0)}")
    print(f"permutation:   head {[int(v) for v in packed.permutation[:8]]}"
          f"{' ...' if m > 8 else ''}")
    print("checksum:      ok")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(n=args.n, m=args.m, samples=args.samples,
                         outlier_frac=args.outlier_frac,
                         row_offset=args.row_offset,
                         outlier_scale=args.outlier_scale,
                         layers=args.layers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = generate_dataset(args.out, args.seed, spec)
    print(f"wrote {len(manifest.entries)} layer(s) under {args.out} "
          f"(seed={args.seed}, n={args.n}, m={args.m}, s={args.samples})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ternpack",
        description="Training-free ternary weight compression toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize all tensors in a manifest")
    q.add_argument("--manifest", required=True, help="manifest JSON path")
    q.add_argument("--out", required=True, help="output directory")
    q.add_argument("--calib", help="alternate manifest supplying calib_path entries")
    q.add_argument("-k", "--group-size", type=int, default=128)
    q.add_argument("--damp-frac", type=float, default=0.01)
    q.add_argument("--max-itf-iters", type=int, default=50)
    q.add_argument("--no-ssr", action="store_true", help="quantize columns in order")
    q.add_argument("--no-aga", action="store_true", help="skip grid alignment")
    q.add_argument("--no-itf", action="store_true", help="stop at threshold init")
    q.add_argument("--no-compensation", action="store_true",
                   help="skip inverse-Hessian error propagation")
    q.add_argument("--scale-dtype", choices=["f32", "f16"], default="f32")
    q.add_argument("--allow-identity-gram", action="store_true",
                   help="quantize layers without calibration against an identity Gram")
    q.add_argument("--report", choices=["json", "csv"], default="json")
    q.add_argument("--jobs", type=int, default=1, help="layers quantized in parallel")
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="expand a packed tensor to a raw binary")
    d.add_argument("--packed", required=True, help=".pt2t file")
    d.add_argument("--out", required=True, help="output raw binary")
    d.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    d.set_defaults(func=cmd_dequantize)

    e = sub.add_parser("eval", help="recompute metrics from packed artifacts")
    e.add_argument("--packed-dir", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--calib", help="alternate manifest supplying calib_path entries")
    e.add_argument("--out", default="eval_report.json")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="print header and stats of a packed tensor")
    i.add_argument("--packed", required=True)
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", help="generate a synthetic manifest + tensors")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--m", type=int, default=256)
    s.add_argument("--samples", type=int, default=320)
    s.add_argument("--layers", type=int, default=1)
    s.add_argument("--outlier-frac", type=float, default=0.05)
    s.add_argument("--row-offset", type=float, default=0.5)
    s.add_argument("--outlier-scale", type=float, default=10.0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TernpackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
