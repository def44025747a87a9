"""cfcam-export command line: single-bundle export and fixture generation."""

import argparse
import sys


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cfcam-export",
        description="Produce cfcam explain bundles from a trained model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_bundle = sub.add_parser("bundle", help="export one bundle")
    p_bundle.add_argument("--checkpoint", required=True,
                          help="toy-model state-dict path (.pt)")
    p_bundle.add_argument("--image", required=True, help="input image (PNG/JPEG)")
    p_bundle.add_argument("--out", required=True, help="bundle directory")
    p_bundle.add_argument("--target-layer", default=None)
    p_bundle.add_argument("--class-index", type=int, default=None)
    p_bundle.set_defaults(func=_cmd_bundle)

    p_fix = sub.add_parser("fixtures", help="train the toy model, emit bundles")
    p_fix.add_argument("--out", required=True)
    p_fix.add_argument("--count", type=int, default=24)
    p_fix.add_argument("--seed", type=int, default=0)
    p_fix.set_defaults(func=_cmd_fixtures)
    return parser


def _cmd_bundle(args):
    from .export import ExportSpec, export_bundle
    spec = ExportSpec(model=args.checkpoint, image_path=args.image,
                      out_dir=args.out, target_layer=args.target_layer,
                      class_index=args.class_index)
    path = export_bundle(spec)
    print(path)
    return 0


def _cmd_fixtures(args):
    from .fixtures import export_fixture_model
    meta = export_fixture_model(args.out, count=args.count, seed=args.seed)
    print(f"accuracy={meta['test_accuracy']:.3f} "
          f"bundles={len(meta['bundles'])} -> {args.out}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"cfcam-export: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
