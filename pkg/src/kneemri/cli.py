"""Command-line entry points.

  kneemri synth --cases N --seed S --out DIR
  kneemri train --config FILE
  kneemri eval --checkpoint FILE --split valid [--combine A C S]
  kneemri grid-search --config FILE --out report.json
  kneemri export-explorer --data DIR --out DIR [--predictions FILE]
"""

import argparse
import json
import sys

from .errors import KneeMriError
from .config import load_run_config
from .explorer import export_explorer
from .gridsearch import grid_search
from .synthetic import generate_synthetic
from .training import evaluate, train
from .volume_io import scan_dataset


def _cmd_synth(args):
    manifests = generate_synthetic(args.cases, args.seed, args.out,
                                   height=args.height, width=args.width,
                                   valid_fraction=args.valid_fraction)
    for split, manifest in manifests.items():
        print(f"{split}: {len(manifest.cases)} cases under {manifest.root}")
    return 0


def _cmd_train(args):
    run = load_run_config(args.config)
    metrics = train(run)
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


def _cmd_eval(args):
    report = evaluate(args.checkpoint, split=args.split, data_root=args.data,
                      combine=args.combine)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report, f, sort_keys=True, indent=2)
            f.write("\n")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _cmd_grid_search(args):
    run = load_run_config(args.config)
    report = grid_search(run, out_path=args.out)
    for task_key, planes in report["cells"].items():
        for plane_key, cell in planes.items():
            if cell["chosen_p"] is None:
                print(f"{task_key}/{plane_key}: all cells failed")
            else:
                print(f"{task_key}/{plane_key}: p*={cell['chosen_p']:.2f} "
                      f"({round(cell['chosen_p'] * 100)}%), "
                      f"auc={cell['chosen_auc']:.4f}")
    return 0


def _cmd_export_explorer(args):
    manifest = scan_dataset(args.data, args.split)
    doc = export_explorer(manifest, args.out, predictions=args.predictions)
    print(f"exported {len(doc['cases'])} cases to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kneemri",
                                     description="Knee MRI pipeline toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--valid-fraction", type=float, default=0.2)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="valid", choices=("train", "valid"))
    p.add_argument("--data", default=None,
                   help="override the dataset root stored in the checkpoint")
    p.add_argument("--combine", nargs=3, metavar=("AXIAL", "CORONAL", "SAGITTAL"),
                   default=None, help="axial/coronal/sagittal checkpoints to ensemble")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grid-search", help="sweep the augmentation probability")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=_cmd_grid_search)

    p = sub.add_parser("export-explorer", help="export the web explorer bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="valid", choices=("train", "valid"))
    p.add_argument("--predictions", default=None)
    p.set_defaults(func=_cmd_export_explorer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KneeMriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
