"""Command-line entry point: ``lmklnet <command> [options]``.

Commands: kernels, train, eval, gating, gradcheck, synth.
Exit codes: 0 success, 1 verification or accuracy failure, 2 usage error,
3 I/O or format error.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, dataio, kernels, synth
from .errors import FormatError, LMKLError, ParseError
from .grads import backward, grad_check
from .network import init_params, load_checkpoint
from .optim import Metrics, TrainConfig, train

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(LMKLError):
    pass


def labels_path(kernel_path):
    return Path(kernel_path).with_suffix(".labels")


# ---------------------------------------------------------------- kernels


def cmd_kernels(args):
    train_full = dataio.load_dataset(args.train)
    test_full = dataio.load_dataset(args.test, label_map=train_full.label_map)
    d = max(train_full.num_features, test_full.num_features)
    train_ds = dataio.subsample(train_full, args.train_cap, args.seed)
    # independent stream for the test subset
    test_ds = dataio.subsample(test_full, args.test_cap, args.seed + 1)

    Xtr = train_ds.to_csr(d)
    Xte = test_ds.to_csr(d)
    d_max = kernels.max_pairwise_distance(Xtr)
    grid = kernels.bandwidth_grid(d_max)
    limit = int(args.memory_limit_gb * 1024**3)
    Ktr = kernels.build_train_kernels(Xtr, grid, memory_limit=limit)
    Kte = kernels.build_cross_kernels(Xte, Xtr, grid, memory_limit=limit)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kernels.save_kernel_stack(Ktr, out / "train.kern", args.dtype)
    kernels.save_kernel_stack(Kte, out / "test.kern", args.dtype)
    dataio.write_labels(train_ds.labels, out / "train.labels")
    dataio.write_labels(test_ds.labels, out / "test.labels")
    manifest = {
        "train_source": str(args.train),
        "test_source": str(args.test),
        "train_count": len(train_ds),
        "test_count": len(test_ds),
        "train_count_original": len(train_full),
        "test_count_original": len(test_full),
        "train_cap": args.train_cap,
        "test_cap": args.test_cap,
        "train_subsampled": len(train_ds) < len(train_full),
        "test_subsampled": len(test_ds) < len(test_full),
        "seed": args.seed,
        "num_features": d,
        "d_max": d_max,
        "bandwidths": grid,
        "dtype": args.dtype,
        "label_map": {str(k): v for k, v in sorted(train_full.label_map.items())},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"train stack {Ktr.n}x{Ktr.n}x{Ktr.m}, test stack {Kte.t}x{Kte.n}x{Kte.m}, d_max={d_max:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------- train

# flag name -> (TrainConfig field or None, parser)
TRAIN_KEYS = {
    "epochs": ("epochs", int),
    "batch-size": ("batch_size", int),
    "lr": ("learning_rate", float),
    "beta1": ("beta1", float),
    "beta2": ("beta2", float),
    "eps-adam": ("eps_adam", float),
    "hidden": ("hidden", int),
    "pool": ("pool", str),
    "eval-every": ("eval_every", int),
    "init-std": ("init_std", float),
    "seeds": (None, str),
    "arch": (None, str),
    "no-timing": (None, str),
    "checkpoint-every": (None, int),
}


def read_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in TRAIN_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
            out[key] = value.strip()
    return out


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def resolve_train_settings(args):
    """Merge defaults, then the config file, then explicit flags."""
    settings = {
        "seeds": "0",
        "arch": "shared",
        "no-timing": "false",
        "checkpoint-every": None,
    }
    defaults = TrainConfig()
    for key, (attr, _) in TRAIN_KEYS.items():
        if attr is not None:
            settings[key] = getattr(defaults, attr)
    if args.config:
        settings.update(read_config_file(args.config))
    for key in TRAIN_KEYS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            settings[key] = value

    fields = {}
    for key, (attr, conv) in TRAIN_KEYS.items():
        if attr is not None:
            fields[attr] = conv(settings[key])
    fields["timing"] = not _parse_bool(settings["no-timing"])
    seeds = [int(s) for s in str(settings["seeds"]).split(",") if s.strip()]
    archs = [a.strip() for a in str(settings["arch"]).split(",") if a.strip()]
    if not seeds or not archs:
        raise UsageError("at least one seed and one architecture are required")
    ckpt_every = settings["checkpoint-every"]
    ckpt_every = int(ckpt_every) if ckpt_every not in (None, "", "0", 0) else None
    return fields, seeds, archs, ckpt_every


def _run_one(job):
    train_path, test_path, out, fields, seed, arch, ckpt_every = job
    Ktr = kernels.load_train_kernels(train_path)
    ytr = dataio.read_labels(labels_path(train_path))
    Kte = kernels.load_cross_kernels(test_path)
    yte = dataio.read_labels(labels_path(test_path))
    cfg = TrainConfig(**fields, seed=seed, architecture=arch)
    run_id = f"{arch}-{cfg.pool}"
    prefix = Path(out) / f"{run_id}_seed{seed}"
    _, metrics = train(
        Ktr, ytr, Kte, yte, cfg,
        metrics_path=f"{prefix}_metrics.csv",
        checkpoint_path=f"{prefix}.ckpt",
        checkpoint_every=ckpt_every,
    )
    last = metrics.records[-1] if metrics.records else None
    return {
        "run_id": run_id,
        "arch": arch,
        "seed": seed,
        "checkpoint": f"{prefix}.ckpt",
        "metrics": f"{prefix}_metrics.csv",
        "final_test_acc": None if last is None else last.test_acc,
        "final_train_loss": None if last is None else last.train_loss,
    }


def summarize(runs):
    by_arch = {}
    for r in runs:
        if r["final_test_acc"] is not None:
            by_arch.setdefault(r["arch"], []).append(r["final_test_acc"])
    out = {}
    for arch, accs in by_arch.items():
        a = np.array(accs, dtype=np.float64)
        out[arch] = {
            "runs": len(a),
            "mean_test_acc": float(a.mean()),
            "std_test_acc": float(a.std(ddof=1)) if len(a) > 1 else 0.0,
        }
    return out


def cmd_train(args):
    fields, seeds, archs, ckpt_every = resolve_train_settings(args)
    for arch in archs:
        TrainConfig(**fields, architecture=arch).validate()
    Ktr_header = dataio.read_kernel_header(args.train_kernels)
    Kte_header = dataio.read_kernel_header(args.test_kernels)
    if Kte_header.n_cols != Ktr_header.n_rows or Kte_header.m_kernels != Ktr_header.m_kernels:
        raise FormatError(
            f"kernel files disagree: train {Ktr_header.n_rows}x{Ktr_header.n_cols}x{Ktr_header.m_kernels}, "
            f"test {Kte_header.n_rows}x{Kte_header.n_cols}x{Kte_header.m_kernels}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (args.train_kernels, args.test_kernels, str(out), fields, seed, arch, ckpt_every)
        for arch in archs
        for seed in seeds
    ]
    if args.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(job) for job in jobs]
    summary = {"config": fields, "seeds": seeds, "runs": runs, "summary": summarize(runs)}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for arch, s in summary["summary"].items():
        print(f"{arch}: test accuracy {s['mean_test_acc']:.4f} +- {s['std_test_acc']:.4f} over {s['runs']} run(s)")
    return EXIT_OK


# ---------------------------------------------------------------- eval / gating


def _load_eval_inputs(args):
    params, meta = load_checkpoint(args.checkpoint)
    Kte = kernels.load_cross_kernels(args.test_kernels)
    y = dataio.read_labels(args.labels or labels_path(args.test_kernels))
    if Kte.n != params.N:
        raise FormatError(f"test stack is against {Kte.n} training samples, checkpoint expects {params.N}")
    if y.size == 0:
        raise FormatError("empty test set")
    return params, Kte, y


def cmd_eval(args):
    params, Kte, y = _load_eval_inputs(args)
    pred = analysis.predict_batch(params, Kte)
    acc = float(np.mean(pred == y))
    per_class = {
        int(c): float(np.mean(pred[y == c] == c)) for c in range(params.C) if np.any(y == c)
    }
    report = {"accuracy": acc, "samples": int(y.size), "per_class_accuracy": per_class}
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    if args.min_accuracy is not None and acc < args.min_accuracy:
        return EXIT_FAIL
    return EXIT_OK


def cmd_gating(args):
    params, Kte, y = _load_eval_inputs(args)
    mean, std = analysis.class_gating_stats(params, Kte, y)
    records = []
    if args.metrics:
        from .optim import EpochRecord

        records = [EpochRecord(**row) for row in analysis.read_metrics_csv(args.metrics)]
    _, json_path = analysis.export_results(
        Metrics(records), mean, args.out, gating_std=std,
        config={"checkpoint": str(args.checkpoint), "test_kernels": str(args.test_kernels)},
    )
    np.set_printoptions(precision=4, suppress=True)
    print(mean)
    print(f"wrote {json_path}")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck / synth


def make_check_problem(N, M, C, B, seed):
    """Batch of RBF kernel slices over random 2-D points, with random labels."""
    rng = np.random.default_rng(seed)
    train_pts = rng.normal(size=(N, 2))
    batch_pts = rng.normal(size=(B, 2))
    grid = kernels.bandwidth_grid(kernels.max_pairwise_distance(train_pts), np.linspace(0.1, 1.0, M))
    K = kernels.build_cross_kernels(batch_pts, train_pts, grid).values
    y = rng.integers(0, C, B)
    return K, y


def cmd_gradcheck(args):
    K, y = make_check_problem(args.N, args.M, args.C, args.B, args.seed)
    params = init_params(args.N, args.H, args.C, args.seed, args.init_std, args.arch, args.pool)
    analytic = None
    if args.inject_fault:
        _, analytic, _ = backward(params, K, y)
        name = args.inject_fault
        if name not in analytic:
            raise UsageError(f"unknown tensor {name!r}; choose from {sorted(analytic)}")
        k = int(np.argmax(np.abs(analytic[name])))
        analytic[name].flat[k] *= 2.0
    report = grad_check(params, K, y, args.eps, args.tol, analytic=analytic)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / f"{args.kind}_train.svm"
    test_path = out / f"{args.kind}_test.svm"
    synth.write_split(args.kind, args.n_train, args.n_test, args.seed, train_path, test_path)
    print(f"wrote {train_path} and {test_path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="lmklnet", description="Localized multiple kernel learning with an attentional gating network.")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kernels", help="precompute RBF kernel stacks from LIBSVM files")
    k.add_argument("--train", required=True)
    k.add_argument("--test", required=True)
    k.add_argument("--out", required=True, help="output directory")
    k.add_argument("--train-cap", type=int, default=20000)
    k.add_argument("--test-cap", type=int, default=10000)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    k.add_argument("--memory-limit-gb", type=float, default=8.0)
    k.set_defaults(func=cmd_kernels)

    t = sub.add_parser("train", help="train on precomputed kernel stacks")
    t.add_argument("--train-kernels", required=True)
    t.add_argument("--test-kernels", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="flat key=value file; keys mirror the flag names")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--eps-adam", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--pool", choices=("sum", "mean"))
    t.add_argument("--eval-every", type=int)
    t.add_argument("--init-std", type=float)
    t.add_argument("--seeds", help="comma-separated, e.g. 0,1,2")
    t.add_argument("--arch", help="shared, separate, or both comma-separated")
    t.add_argument("--no-timing", action="store_const", const="true", default=None,
                   help="write 0 for wall time so reruns give identical CSVs")
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--parallel", action="store_true", help="run seeds in separate processes")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "accuracy of a checkpoint on a test stack"),
        ("gating", cmd_gating, "per-class mean kernel weights"),
    ):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--test-kernels", required=True)
        e.add_argument("--labels", help="defaults to the .labels file next to the kernels")
        if name == "eval":
            e.add_argument("--json")
            e.add_argument("--min-accuracy", type=float)
        else:
            e.add_argument("--out", required=True, help="output prefix")
            e.add_argument("--metrics", help="metrics CSV to bundle with the export")
        e.set_defaults(func=func)

    g = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    g.add_argument("--N", type=int, default=16)
    g.add_argument("--M", type=int, default=4)
    g.add_argument("--H", type=int, default=8)
    g.add_argument("--C", type=int, default=3)
    g.add_argument("--B", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--arch", choices=("shared", "separate"), default="shared")
    g.add_argument("--pool", choices=("sum", "mean"), default="sum")
    g.add_argument("--init-std", type=float, default=0.05)
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--inject-fault", metavar="TENSOR", help="double one analytic entry of TENSOR")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic 2-D train/test split")
    s.add_argument("--kind", choices=synth.KINDS, required=True)
    s.add_argument("--n-train", type=int, default=500)
    s.add_argument("--n-test", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lmklnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FormatError, OSError) as exc:
        print(f"lmklnet: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"lmklnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LMKLError as exc:
        print(f"lmklnet: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
