"""``harlm`` command line.

Exit codes: 0 success, 1 runtime error (diagnostic on stderr), 2 usage error.
Every output file is written atomically.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from harlm.io import atomic_write_text, file_digest, fingerprint

log = logging.getLogger("harlm")

# flags naming files or directories a command reads
INPUT_FLAGS = ("input", "root", "features", "test_features", "windows", "model", "label_map", "template",
               "config", "centroids_from")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# resolved run configuration
# --------------------------------------------------------------------------


def path_digest(path: str | Path) -> str:
    """sha256 of a file, or of the sorted (relpath, digest) list of a directory."""
    p = Path(path)
    if p.is_dir():
        items = [(str(f.relative_to(p)), file_digest(f)) for f in sorted(p.rglob("*")) if f.is_file()]
        return fingerprint(items)
    return file_digest(p)


@dataclass
class RunConfig:
    subcommand: str
    args: dict[str, Any]
    seed: int | None = None
    input_digests: dict[str, str] = field(default_factory=dict)

    @classmethod
    def resolve(cls, ns: argparse.Namespace) -> "RunConfig":
        args = {k: v for k, v in sorted(vars(ns).items()) if k not in ("func", "command", "verbose")}
        digests = {}
        for k in INPUT_FLAGS:
            v = args.get(k)
            for item in v if isinstance(v, list) else [v]:
                if isinstance(item, str) and Path(item).exists():
                    digests[f"{k}:{item}"] = path_digest(item)
        return cls(ns.command, args, args.get("seed"), digests)

    @property
    def fingerprint(self) -> str:
        return fingerprint({"subcommand": self.subcommand, "args": self.args, "inputs": self.input_digests})


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n")


def _labels_arg(s: str | None) -> list[str] | None:
    if not s:
        return None
    return [x.strip() for x in s.split(",") if x.strip()]


def parse_split(text: str, seed: int, subjects: Sequence[str] = ()):
    """``seen[:frac]``, ``unseen[:s1,s2]``, ``cross:SRC:DST`` or a JSON file."""
    from harlm.evaluation import SplitKind, SplitSpec

    p = Path(text)
    if p.suffix == ".json" and p.exists():
        d = json.loads(p.read_text(encoding="utf-8"))
        d.setdefault("seed", seed)
        return SplitSpec(**d)
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "seen":
        return SplitSpec(SplitKind.SEEN, seed=seed, test_fraction=float(rest) if rest else 0.2)
    if kind == "unseen":
        held = [s for s in rest.split(",") if s] if rest else default_held_out(subjects, seed)
        return SplitSpec(SplitKind.UNSEEN_SUBJECT, seed=seed, held_out_subjects=held)
    if kind == "cross":
        src, _, dst = rest.partition(":")
        if not src or not dst:
            raise UsageError("cross split needs cross:<train-dataset>:<test-dataset>")
        from harlm.records import DatasetId

        return SplitSpec(SplitKind.CROSS_DATASET, seed=seed,
                         train_dataset=DatasetId.parse(src).value, test_dataset=DatasetId.parse(dst).value)
    raise UsageError(f"bad split spec {text!r}; use seen[:frac], unseen[:subjects], cross:SRC:DST or a .json file")


def default_held_out(subjects: Sequence[str], seed: int, fraction: float = 0.2) -> list[str]:
    """Seeded choice of ceil(fraction * n) subjects (at least one, never all)."""
    from harlm.ingest.datasets import _subject_key

    subs = sorted(set(map(str, subjects)), key=_subject_key)
    if len(subs) < 2:
        raise UsageError("unseen split needs at least two subjects")
    k = min(max(1, math.ceil(fraction * len(subs))), len(subs) - 1)
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(subs, size=k, replace=False).tolist(), key=_subject_key)


def _load_features(args):
    from harlm.dataset import LabeledDataset, read_features_csv

    data = read_features_csv(args.features)
    extra = getattr(args, "test_features", None)
    if extra:
        data = LabeledDataset.concat([data, read_features_csv(extra)])
    return data


def _split(args, data):
    from harlm.evaluation import make_split

    spec = parse_split(args.split, args.seed, data.subjects)
    train, test = make_split(data, spec)
    return spec, train, test


def _dataset_name(data) -> str:
    return "+".join(dict.fromkeys(str(d) for d in data.datasets))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_fixture(args) -> int:
    from harlm.synthetic import install_fixture

    out = install_fixture(args.out)
    print(out)
    return 0


def cmd_ingest(args) -> int:
    from harlm.ingest import load_label_map, parse_dataset
    from harlm.records import write_canonical_csv

    lmap = load_label_map(args.label_map) if args.label_map else None
    df, desc = parse_dataset(args.root, args.dataset, label_map=lmap, strict_mode=args.strict_labels,
                             position=args.position, device=args.device)
    write_canonical_csv(df, args.out)
    if args.descriptor_out:
        _write_json(args.descriptor_out, {
            "dataset_id": desc.dataset_id.value,
            "sampling_rate_hz": desc.sampling_rate_hz,
            "channels": [c.name for c in desc.channel_order],
            "label_vocabulary": desc.label_vocabulary,
            "subject_ids": desc.subject_ids,
            "units": desc.units,
            "dropped_labels": desc.dropped_labels,
            "malformed_rows": desc.malformed_rows,
        })
    log.info("ingest %s: %d records, %d labels, %d subjects", desc.dataset_id.value, len(df),
             len(desc.label_vocabulary), len(desc.subject_ids))
    return 0


def cmd_segment(args) -> int:
    from harlm.records import read_canonical_csv
    from harlm.windowing import segment, write_windows

    ws = segment(read_canonical_csv(args.input), args.window, args.step, fs=args.fs)
    if len(ws) == 0:
        raise RuntimeError(f"no windows: every session is shorter than {args.window} samples")
    write_windows(ws, args.out)
    log.info("segment: %d windows from %d sessions (%d too short)", len(ws), ws.n_sessions, ws.skipped_sessions)
    return 0


def cmd_features(args) -> int:
    from harlm.dataset import write_features_csv
    from harlm.features import FeatureConfig, extract_all
    from harlm.windowing import read_windows

    cfg = FeatureConfig(band_split_hz=args.band_split_hz, band_low_hz=args.band_low_hz, taper=args.taper)
    data = extract_all(read_windows(args.input), cfg)
    write_features_csv(data, args.out)
    log.info("features: %d rows x %d columns", len(data), len(data.feature_names))
    return 0


def _train_kwargs(args) -> dict:
    kind = args.model
    kw: dict[str, Any] = {}
    if kind == "rf":
        kw["n_trees"] = args.trees
        if args.max_depth is not None:
            kw["max_depth"] = args.max_depth
    elif kind == "svm":
        kw["lam"] = args.lam
        if args.epochs is not None:
            kw["epochs"] = args.epochs
    else:
        kw["lr"] = args.lr
        if args.epochs is not None:
            kw["epochs"] = args.epochs
    return kw


def cmd_train(args) -> int:
    from harlm.classifiers import train

    data = _load_features(args)
    spec, tr, _ = _split(args, data)
    model = train(args.model, tr, seed=args.seed, **_train_kwargs(args))
    model.hyperparameters["split"] = spec.as_dict()
    model.save(args.out)
    log.info("train %s: %d rows, %d classes", model.kind, len(tr), tr.n_classes)
    return 0


def _llm_predictor(args, cfg_dict: dict, train, test):
    from harlm.features import row_vector
    from harlm.llm_client import BackendConfig, CentroidModel, LlmClient, classify_window
    from harlm.prompting import load_template

    cfg_dict = dict(cfg_dict)
    if cfg_dict.get("kind") == "MOCK_CENTROID" and cfg_dict.get("centroids") is None:
        cfg_dict["centroids"] = CentroidModel.fit(train).to_dict()
    cfg = BackendConfig.from_dict(cfg_dict)
    client = LlmClient(cfg)
    template = load_template(args.template)
    vocab = list(test.label_vocabulary)

    def predict(i: int) -> str:
        return classify_window(client, template, row_vector(test, i), vocab, precision=args.precision).parsed_label

    return cfg, predict


def cmd_eval(args) -> int:
    from harlm.classifiers import ClassifierModel
    from harlm.evaluation import evaluate

    data = _load_features(args)
    spec, tr, te = _split(args, data)
    raw = json.loads(Path(args.model).read_text(encoding="utf-8"))
    config: dict[str, Any] = {
        "dataset": args.dataset_name or _dataset_name(te if spec.kind.value != "CROSS_DATASET" else data),
        "split": spec.as_dict(),
        "seed": args.seed,
        "features_digest": file_digest(args.features),
        "model_digest": file_digest(args.model),
    }
    if raw.get("format") == "harlm-model":
        model = ClassifierModel.from_dict(raw)
        test = te.select_columns(model.feature_names) if list(te.feature_names) != list(model.feature_names) else te
        config["model_name"] = args.model_name or {"RANDOM_FOREST": "RF", "LINEAR_SVM": "SVM",
                                                   "FEEDFORWARD_NET": "DNN"}[model.kind]
        report = evaluate(model, test, config)
    else:
        cfg, predictor = _llm_predictor(args, raw, tr, te)
        config["model_name"] = args.model_name or f"LLM:{cfg.kind.value}"
        config["backend"] = {k: v for k, v in cfg.to_dict().items() if k != "centroids"}
        config["template"] = args.template
        report = evaluate(predictor, te, config)
    _write_json(args.out, report.to_dict())
    log.info("eval %s on %s: accuracy %.4f, macro F1 %.4f", config["model_name"], config["dataset"],
             report.accuracy, report.macro_f1)
    return 0


def cmd_promptgen(args) -> int:
    from harlm.dataset import read_features_csv
    from harlm.prompting import generate_instruction_pairs, load_template

    data = read_features_csv(args.features)
    if args.limit is not None:
        data = data.take(np.arange(min(args.limit, len(data))))
    pairs = generate_instruction_pairs(data, load_template(args.template), args.mode,
                                       precision=args.precision, label_set=_labels_arg(args.labels))
    lines = [p.to_json() + "\n" for p in pairs]
    atomic_write_text(args.out, "".join(lines))
    log.info("promptgen: %d pairs", len(lines))
    return 0


def cmd_tokenbudget(args) -> int:
    from harlm.prompting import token_budget
    from harlm.windowing import read_windows

    reps = [token_budget(w, limit=args.limit, precision=args.precision) for w in read_windows(args.windows)]
    if not reps:
        raise RuntimeError("windows file is empty")
    ratios = [r.ratio for r in reps]
    _write_json(args.out, {
        "limit": args.limit,
        "precision": args.precision,
        "n_windows": len(reps),
        "max_ratio": max(ratios),
        "mean_ratio": float(np.mean(ratios)),
        "all_features_fit": all(r.feature_fits for r in reps),
        "raw_fit_count": sum(r.raw_fits for r in reps),
        "windows": [r.to_dict() for r in reps],
    })
    return 0


def _backend_config(args, centroid_source=None):
    from harlm.dataset import read_features_csv
    from harlm.llm_client import BackendConfig, CentroidModel, load_backend_config

    if args.config:
        d = json.loads(Path(args.config).read_text(encoding="utf-8"))
    else:
        d = {"kind": "HTTP_CHAT" if args.backend == "http" else "MOCK_CENTROID",
             "endpoint_url": args.endpoint or "", "model_name": args.model or ""}
    if args.timeout is not None:
        d["timeout"] = args.timeout
    if args.max_retries is not None:
        d["max_retries"] = args.max_retries
    if d.get("kind") == "MOCK_CENTROID" and d.get("centroids") is None:
        src = args.centroids_from or centroid_source
        d["centroids"] = CentroidModel.fit(read_features_csv(src)).to_dict()
    return BackendConfig.from_dict(d)


def cmd_llm_classify(args) -> int:
    from harlm.dataset import read_features_csv
    from harlm.features import row_vector
    from harlm.llm_client import LlmClient, UnparseableResponseError, classify_window
    from harlm.prompting import load_template

    data = read_features_csv(args.features)
    labels = _labels_arg(args.labels) or list(data.label_vocabulary)
    client = LlmClient(_backend_config(args, args.features))
    template = load_template(args.template)
    n = len(data) if args.limit is None else min(args.limit, len(data))
    out = []
    bad = 0
    for i in range(n):
        fv = row_vector(data, i)
        try:
            res = classify_window(client, template, fv, labels, precision=args.precision)
            row = res.to_dict()
        except UnparseableResponseError as exc:
            bad += 1
            row = {"raw_text": exc.raw_text, "parsed_label": None, "error": "unparseable"}
        row = {"index": i, "gold": fv.activity, **row}
        out.append(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    atomic_write_text(args.out, "".join(out))
    log.info("llm-classify: %d rows, %d unparseable", n, bad)
    return 0


def cmd_qa(args) -> int:
    from harlm.dataset import read_features_csv
    from harlm.features import row_vector
    from harlm.llm_client import LlmClient, answer_question
    from harlm.prompting import load_template

    if not args.question.strip():
        raise UsageError("--question must be non-empty")
    data = read_features_csv(args.features)
    if not 0 <= args.row < len(data):
        raise UsageError(f"--row out of range (0..{len(data) - 1})")
    client = LlmClient(_backend_config(args, args.features))
    res = answer_question(client, row_vector(data, args.row), args.question, load_template(args.template),
                          precision=args.precision)
    _write_json(args.out, {"row": args.row, "question": args.question, **res.to_dict()})
    return 0


def _read_table(path: str):
    """(matrix, column names, labels) from a canonical or feature CSV."""
    import pandas as pd

    head = Path(path).open(encoding="utf-8").readline().strip().split(",")
    if head and head[0] == "timestamp":
        from harlm.records import present_channels, read_canonical_csv

        df = read_canonical_csv(path)
        names = [c.name for c in present_channels(df)]
        df = df.dropna(subset=names)
        return df[names].to_numpy(float), names, df["activity"].to_numpy().astype(str)
    from harlm.dataset import read_features_csv

    data = read_features_csv(path)
    return data.features, list(data.feature_names), data.labels


def cmd_analyze(args) -> int:
    from harlm.analysis import correlation_matrix, histogram, pca2

    X, names, labels = _read_table(args.input)
    if args.columns:
        want = _labels_arg(args.columns)
        missing = [c for c in want if c not in names]
        if missing:
            raise UsageError(f"unknown columns {missing}")
        idx = [names.index(c) for c in want]
        X, names = X[:, idx], want
    if args.kind == "corr":
        cm = correlation_matrix(X, names)
        text = cm.to_frame().to_csv(float_format="%.9g", lineterminator="\n")
    elif args.kind == "pca":
        if args.seed is None:
            raise UsageError("analyze pca needs --seed")
        proj = pca2(X, labels, seed=args.seed)
        text = proj.to_frame().to_csv(index=False, float_format="%.9g", lineterminator="\n")
        log.info("pca explained variance ratio: %.4f %.4f", *proj.explained_variance_ratio)
    else:
        import pandas as pd

        frames = [histogram(X[:, j], bins=args.bins, feature_name=n).to_frame() for j, n in enumerate(names)]
        text = pd.concat(frames, ignore_index=True).to_csv(index=False, float_format="%.9g", lineterminator="\n")
    atomic_write_text(args.out, text)
    return 0


def cmd_report(args) -> int:
    from harlm.evaluation import load_reports, render_report

    reports = []
    for p in args.input:
        reports.extend(load_reports(Path(p).read_text(encoding="utf-8")))
    fmt = {"markdown": "MARKDOWN_TABLE", "csv": "CSV", "json": "JSON"}[args.format]
    atomic_write_text(args.out, render_report(reports, fmt))
    return 0


def cmd_pipeline(args) -> int:
    from harlm.pipeline import run_pipeline

    return run_pipeline(args.config, force=args.force, threads=args.threads)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_backend_flags(p) -> None:
    p.add_argument("--backend", choices=("http", "mock"), default="mock")
    p.add_argument("--endpoint", help="chat-completion URL (http backend)")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--config", help="backend config JSON (overrides --backend/--endpoint/--model)")
    p.add_argument("--centroids-from", help="feature CSV the mock backend fits its centroids on")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--precision", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="harlm", description="IMU activity recognition: features, baselines and LLM prompting.")
    ap.add_argument("--threads", type=int, default=0, help="worker threads for numba kernels (0 = auto)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fixture", help="copy the bundled synthetic fixture (Shoaib raw layout)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("ingest", help="parse a dataset into canonical CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label-map")
    p.add_argument("--strict-labels", action="store_true")
    p.add_argument("--position", help="Shoaib body position (default arm)")
    p.add_argument("--device", help="HHAR/WISDM device family: phone or watch")
    p.add_argument("--descriptor-out", help="also write the dataset descriptor JSON here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("segment", help="cut canonical records into windows")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--step", type=int, default=20)
    p.add_argument("--fs", type=float, help="override the inferred sampling rate")
    p.add_argument("--out", required=True, help=".jsonl or .npz")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", help="per-window feature table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--band-split-hz", type=float, default=3.0)
    p.add_argument("--band-low-hz", type=float)
    p.add_argument("--taper", choices=("hann",))
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a baseline classifier")
    p.add_argument("--model", required=True, choices=("rf", "svm", "dnn"))
    p.add_argument("--features", required=True)
    p.add_argument("--test-features", help="second feature CSV (cross-dataset splits)")
    p.add_argument("--split", default="seen")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model or LLM backend config on a split")
    p.add_argument("--model", required=True, help="model JSON or LLM backend config JSON")
    p.add_argument("--features", required=True)
    p.add_argument("--test-features")
    p.add_argument("--split", default="seen")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset-name")
    p.add_argument("--model-name")
    p.add_argument("--template", default="classify_v1")
    p.add_argument("--precision", type=int, default=3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("promptgen", help="instruction-tuning JSONL from features")
    p.add_argument("--features", required=True)
    p.add_argument("--template", default="classify_v1")
    p.add_argument("--mode", choices=("classify", "reasoned"), default="classify")
    p.add_argument("--labels")
    p.add_argument("--precision", type=int, default=3)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_promptgen)

    p = sub.add_parser("tokenbudget", help="raw vs feature prompt token estimates")
    p.add_argument("--windows", required=True)
    p.add_argument("--limit", type=int, default=4096)
    p.add_argument("--precision", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenbudget)

    p = sub.add_parser("llm-classify", help="classify feature rows with an LLM backend")
    _add_backend_flags(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--template", default="classify_v1")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_llm_classify)

    p = sub.add_parser("qa", help="ask a free-form question about one feature row")
    _add_backend_flags(p)
    p.add_argument("--features", required=True)
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--question", required=True)
    p.add_argument("--template", default="qa_v1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_qa)

    p = sub.add_parser("analyze", help="correlation, PCA or histogram tables")
    p.add_argument("kind", choices=("corr", "pca", "hist"))
    p.add_argument("--in", dest="input", required=True, help="canonical or feature CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--columns", help="comma-separated subset of columns")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--seed", type=int, help="start-vector seed (pca)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="render eval reports as one table")
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run a TOML pipeline with incremental rebuilds")
    p.add_argument("config")
    p.add_argument("--force", action="store_true", help="ignore the stage state file")
    p.set_defaults(func=cmd_pipeline)
    return ap


def _set_threads(n: int) -> None:
    from harlm._accel import HAVE_NUMBA

    if n > 0 and HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        _set_threads(args.threads)
        return int(args.func(args) or 0)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"harlm: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        log.debug("traceback", exc_info=True)
        print(f"harlm: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
