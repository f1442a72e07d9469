"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io, plotting
from .config import RunConfig
from .errors import ConfigError, DataError, NumericalError
from .estimation import THREADS_ENV
from .pipeline import classify, estimate
from .synthetic import generate_dataset, make_phantoms

logger = logging.getLogger("covhet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

ESTIMATE_REPORT = "estimate.json"
MEAN_FILE = "mean.npy"
EIGVEC_FILE = "eigenvectors.npy"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
    overrides = {
        ("generator", "seed"): getattr(args, "seed", None),
        ("phantom", "n_res"): getattr(args, "nres", None),
        ("cg", "cov_max_iters"): getattr(args, "max_iters", None),
        ("gmm", "K"): getattr(args, "k", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            data.setdefault(section, {})[key] = value
    if getattr(args, "no_figures", False):
        data.setdefault("output", {})["figures"] = False
    return RunConfig.from_dict(data)


def _read_dataset(path, threads):
    if not Path(path).is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    d = io.read_dataset(path)
    d.threads = threads
    return d


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _write_all(files: dict[Path, bytes]) -> None:
    """Write every file or, on failure, none of them."""
    written = []
    try:
        for path, data in files.items():
            path.write_bytes(data)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise


def _npy_bytes(arr: np.ndarray) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg.paths.out
    if not out:
        raise ConfigError("no output path (--out or paths.out)")
    spec = cfg.phantom_spec()
    d = generate_dataset(make_phantoms(spec), cfg.generator_config(), cfg.angle_distribution(), spec.n_res, spec.N)
    io.write_dataset(d, out)
    print(f"wrote {d.n} images (n_res={d.n_res}, N={d.N}, sigma2={d.sigma2:.6g}) to {out}")
    return EXIT_OK


def run_estimate(dataset_path, out_dir: Path, cfg: RunConfig, threads: int) -> io.ResultsReport:
    d = _read_dataset(dataset_path, threads)
    mean_opts, cov_opts = cfg.cg_options()
    sp = cfg.spectral
    res = estimate(d, mean_opts, cov_opts, sp.tau, sp.m_scan, sp.n_eigvecs)
    report = io.ResultsReport(
        n=d.n,
        n_res=d.n_res,
        sigma2=float(d.sigma2),
        eigenvalues=[float(x) for x in res.eigenvalues],
        num_classes=res.gap.num_classes,
        gap_ratio=float(res.gap.best_ratio),
        gap_index=res.gap.best_index,
        cg_residuals={"mean": res.mean_report.residuals, "covariance": res.covariance_report.residuals},
        timings={k: round(v, 6) for k, v in res.timings.items()},
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_all({
        out_dir / ESTIMATE_REPORT: report.to_json(include_timings=False).encode(),
        out_dir / "timings.json": (json.dumps(report.timings, sort_keys=True) + "\n").encode(),
        out_dir / MEAN_FILE: _npy_bytes(res.mean),
        out_dir / EIGVEC_FILE: _npy_bytes(res.eigenvectors),
    })
    return report


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    dataset = args.dataset or cfg.paths.dataset
    out = args.out or cfg.paths.out
    if not dataset or not out:
        raise ConfigError("estimate needs a dataset path and --out")
    report = run_estimate(dataset, Path(out), cfg, _threads(args))
    print(f"estimated C = {report.num_classes} (gap ratio {report.gap_ratio:.3f}); "
          f"top eigenvalues {', '.join(f'{x:.4g}' for x in report.eigenvalues[:3])}")
    return EXIT_OK


def run_classify(dataset_path, estimate_dir: Path, out_dir: Path, cfg: RunConfig, threads: int) -> io.ResultsReport:
    d = _read_dataset(dataset_path, threads)
    est_path = estimate_dir / ESTIMATE_REPORT
    if not est_path.is_file():
        raise FileNotFoundError(f"estimate report not found: {est_path}")
    report = io.ResultsReport.from_json(est_path.read_text())
    mu = np.load(estimate_dir / MEAN_FILE)
    vecs = np.load(estimate_dir / EIGVEC_FILE)
    if mu.shape != (d.ball.p,) or vecs.shape[0] != d.ball.p:
        raise DataError("estimate does not match the dataset resolution")
    K = cfg.gmm.K if cfg.gmm.K is not None else report.num_classes
    res = classify(d, mu, vecs, K, cfg.gmm_options(), cfg.gmm.seed)

    report.alpha = [[float(x) for x in row] for row in res.alpha]
    report.labels = [int(x) for x in res.labels]
    report.accuracy = res.accuracy

    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_csv(out_dir / "labels.csv", ["index", "label"], enumerate(res.labels.tolist()))
    io.write_csv(out_dir / "alpha.csv", ["index"] + [f"alpha_{j + 1}" for j in range(res.alpha.shape[1])],
                 ([s, *row] for s, row in enumerate(res.alpha.tolist())))
    io.write_csv(out_dir / "eigenvalue_hist.csv", ["bin_center", "count"], io.histogram_rows(report.eigenvalues))
    io.write_csv(out_dir / "alpha1_hist.csv", ["bin_center", "count"], io.histogram_rows(res.alpha[:, 0]))
    (out_dir / "report.json").write_text(report.to_json(include_timings=False))
    if cfg.output.figures:
        plotting.eigenvalue_histogram(report.eigenvalues, out_dir / "eigenvalue_hist.png")
        plotting.coordinate_histogram(res.alpha[:, 0], out_dir / "alpha1_hist.png", labels=res.labels)
    return report


def cmd_classify(args) -> int:
    cfg = _load_config(args)
    report = run_classify(args.dataset, Path(args.estimate), Path(args.out), cfg, _threads(args))
    msg = f"classified {report.n} images into {len(set(report.labels))} clusters"
    if report.accuracy is not None:
        msg += f"; accuracy {report.accuracy:.4f}"
    print(msg)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .clustering import accuracy_best_permutation

    pred = io.read_labels_csv(args.labels)
    d = _read_dataset(args.dataset, 1)
    if d.labels is None:
        raise DataError("dataset carries no truth labels")
    if pred.size != d.n:
        raise DataError(f"{pred.size} labels for {d.n} images")
    acc = accuracy_best_permutation(pred, d.labels)
    print(f"accuracy {acc:.6f}")
    if args.out:
        Path(args.out).write_text(json.dumps({"accuracy": acc, "n": d.n}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg.paths.out or "")
    if not str(out):
        raise ConfigError("no output directory (--out or paths.out)")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    spec = cfg.phantom_spec()
    d = generate_dataset(make_phantoms(spec), cfg.generator_config(), cfg.angle_distribution(), spec.n_res, spec.N)
    data_path = out / "dataset.cvhet"
    io.write_dataset(d, data_path)
    threads = _threads(args)
    run_estimate(data_path, out / "estimate", cfg, threads)
    report = run_classify(data_path, out / "estimate", out / "classify", cfg, threads)
    print(f"estimated C = {report.num_classes} (gap ratio {report.gap_ratio:.3f})")
    if report.accuracy is not None:
        print(f"accuracy {report.accuracy:.4f}")
    print(f"done in {time.perf_counter() - t0:.1f} s; outputs in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covhet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--nres", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate mean, covariance and its spectrum")
    p.add_argument("dataset", nargs="?")
    common(p)
    p.add_argument("--max-iters", type=int, dest="max_iters", help="covariance CG iteration cap")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("classify", help="coordinates, GMM clustering, histograms")
    p.add_argument("dataset")
    p.add_argument("estimate", help="directory written by 'estimate'")
    common(p)
    p.add_argument("--k", type=int, help="number of clusters (default: estimated C)")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="accuracy of labels against the truth")
    p.add_argument("labels")
    p.add_argument("dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="simulate, estimate, classify in one go")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--nres", type=int)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--k", type=int)
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
