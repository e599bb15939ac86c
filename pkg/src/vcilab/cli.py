"""Command line entry point: generate, train, evaluate, estimate, ablate."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .estimators import (
    plug_in_mean,
    predict_potential_outcomes,
    read_predictions,
    reports_csv,
    robust_ate,
    robust_ate_covariate,
)
from .evaluation import (
    MetricsReport,
    OracleReplay,
    axiomatic_metrics,
    counterfactual_errors,
    min_gap,
    oracle_consistency_kl,
    verify_elbo_discrete,
    verify_implicit_elbo_discrete,
)
from .models import PropensityModel, fit_propensity
from .scm import (
    ArrayData,
    DatasetFormatError,
    InvalidSpecError,
    ScmSpec,
    TreatmentSpace,
    blob_image_spec,
    file_sha256,
    generate_dataset,
    linear_gaussian_spec,
    nonlinear_vector_spec,
    random_discrete_scm,
    read_dataset,
    read_spec,
    write_dataset,
)
from .tensor import CheckpointError, save_checkpoint
from .training import (
    VciConfig,
    ablation_sweep,
    load_model,
    sweep_csv,
    timestamp,
    train,
    write_manifest,
)

OUTPUT_ROOT_ENV = "VCILAB_OUTPUT_ROOT"
BENCHMARKS = {
    "linear_gaussian": linear_gaussian_spec,
    "nonlinear_vector": nonlinear_vector_spec,
    "blob_image": blob_image_spec,
}
METRICS = ("cf_mse", "attributes", "oracle_kl", "axiomatic", "verify_elbo", "verify_implicit")
MODE_NAMES = {"hae": "HAE", "hae_a": "HAE_A", "sae": "SAE", "vci": "VCI"}


class CliError(Exception):
    pass


def out_path(p) -> Path:
    """Resolve relative output paths against $VCILAB_OUTPUT_ROOT when set."""
    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


# ---------------------------------------------------------------------------
# data loading


def infer_space(data: ArrayData) -> TreatmentSpace:
    t = np.asarray(data.t)
    if t.ndim == 1 and np.issubdtype(t.dtype, np.integer):
        return TreatmentSpace("categorical", int(max(t.max(), np.max(data.t_prime))) + 1)
    both = np.vstack([t.reshape(len(t), -1), np.asarray(data.t_prime).reshape(len(t), -1)])
    return TreatmentSpace("continuous", low=tuple(both.min(0)), high=tuple(both.max(0)))


def load_data(path) -> tuple[ArrayData, ScmSpec | None, list[int], TreatmentSpace]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"dataset not found: {path}")
    samples = read_dataset(path)
    if not samples:
        raise CliError(f"dataset {path} is empty")
    spec = read_spec(path)
    if spec is not None:
        cards = list(spec.covariate_cards)
        space = spec.treatment
    else:
        k = len(samples[0].x)
        cards = [int(max(s.x[i] for s in samples)) + 1 for i in range(k)]
        space = None
    data = ArrayData.from_samples(samples, cards)
    return data, spec, cards, space or infer_space(data)


def load_config(path, overrides: dict) -> VciConfig:
    d = {}
    if path:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc.msg}") from None
    d.update({k: v for k, v in overrides.items() if v is not None})
    if "mode" in d:
        d["mode"] = MODE_NAMES.get(str(d["mode"]).lower(), d["mode"])
    return VciConfig.from_dict(d)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError(f"spec file not found: {args.spec}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"spec file is not valid JSON: {exc.msg}") from None
        spec = ScmSpec.from_dict(raw)
    elif args.benchmark == "discrete":
        from .scm import discrete_spec
        spec = discrete_spec(random_discrete_scm(np.random.default_rng(args.spec_seed)), args.spec_seed)
    else:
        spec = BENCHMARKS[args.benchmark](args.spec_seed)
    spec.validate()
    samples = generate_dataset(spec, args.n, args.seed)
    dest = out_path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, dest, spec, args.seed)
    print(f"wrote {len(samples)} samples to {dest}")
    return 0


# ---------------------------------------------------------------------------
# train


def _train_overrides(args) -> dict:
    keys = ("mode", "epochs", "lr", "disc_lr", "seed", "batch_size", "supervision", "detach", "weight_cf",
            "weight_kl", "latent_dim", "sigma", "eval_period")
    return {k: getattr(args, k, None) for k in keys}


def cmd_train(args) -> int:
    data_path = Path(args.data)
    data, spec, cards, space = load_data(data_path)
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.oracle_replay:
        if data.y_prime_true is None:
            raise CliError("oracle replay needs ground-truth counterfactuals in the dataset")
        save_checkpoint(out / "final.ckpt", {}, {"kind": "oracle_replay", "dataset_sha256": file_sha256(data_path)})
        print(f"wrote oracle replay checkpoint to {out / 'final.ckpt'}")
        return 0
    config = load_config(args.config, _train_overrides(args))
    resolved = config.to_dict()
    _write_text(out / "config.json", json.dumps(resolved, sort_keys=True, indent=1) + "\n")
    digest = file_sha256(data_path)
    started = timestamp()
    write_manifest(out / "run_manifest.json", resolved, digest, [], started)
    latent = spec.latent_dim if spec is not None else None
    state = train(config, data, space, cards, latent, out_dir=out)
    outputs = sorted(p.name for p in out.iterdir() if p.name != "run_manifest.json")
    write_manifest(out / "run_manifest.json", resolved, digest, outputs, started, timestamp())
    print(f"trained {config.mode} for {state.epoch} epochs; best {state.best.get('name')}="
          f"{state.best.get('metric'):.6g} at epoch {state.best.get('epoch')}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _load_predictor(checkpoint, data: ArrayData):
    if checkpoint is None:
        raise CliError("this metric needs --checkpoint")
    path = Path(checkpoint)
    if not path.exists():
        raise CliError(f"checkpoint not found: {path}")
    model, meta = load_model(path)
    if model is not None:
        return model
    if meta.get("kind") == "oracle_replay":
        return OracleReplay(data)
    raise CliError(f"unsupported checkpoint kind {meta.get('kind')!r}")


def cmd_evaluate(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise CliError(f"unknown metric(s) {unknown}; valid metrics: {', '.join(METRICS)}")
    values: dict = {}
    needs_data = [m for m in metrics if not m.startswith("verify")]
    data = spec = model = None
    if needs_data:
        if args.data is None:
            raise CliError("these metrics need --data")
        data, spec, _cards, _space = load_data(args.data)
        model = _load_predictor(args.checkpoint, data)
    resolution = spec.options.get("resolution") if spec is not None and spec.family == "blob_image" else None
    for m in metrics:
        if m == "cf_mse":
            values["cf_mse"] = counterfactual_errors(model, data).mse
        elif m == "attributes":
            if resolution is None:
                raise CliError("attribute errors need a blob_image dataset")
            values["attribute_mae"] = counterfactual_errors(model, data, resolution).attribute_mae
        elif m == "oracle_kl":
            if not hasattr(model, "encoder"):
                raise CliError("oracle_kl needs a trained model checkpoint")
            values["oracle_kl"] = oracle_consistency_kl(model.encoder, data)
        elif m == "axiomatic":
            if resolution is None:
                raise CliError("axiomatic metrics need a blob_image dataset")
            values.update(axiomatic_metrics(model, data, args.cycles, resolution))
        else:
            verify = verify_elbo_discrete if m == "verify_elbo" else verify_implicit_elbo_discrete
            rng = np.random.default_rng(args.seed)
            passed = 0
            worst = np.inf
            for _ in range(args.n_scms):
                gap = min_gap(verify(random_discrete_scm(rng, args.max_size), args.max_size))
                worst = min(worst, gap)
                passed += gap >= -1e-9
            values[m] = {"checked": args.n_scms, "passed": int(passed), "min_gap": float(worst)}
    report = MetricsReport(values)
    text = report.to_json()
    if args.out:
        _write_text(out_path(args.out), text)
    sys.stdout.write(text)
    failed = [m for m in ("verify_elbo", "verify_implicit") if m in values and values[m]["passed"] < args.n_scms]
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# estimate


def _parse_alpha(raw: str, space: TreatmentSpace):
    if space.is_categorical:
        try:
            alpha = int(raw)
        except ValueError:
            raise CliError(f"alpha {raw!r} is not a treatment level") from None
    else:
        alpha = np.asarray([float(v) for v in raw.split(",")])
    if not space.contains(alpha):
        raise CliError(f"alpha {raw} lies outside the treatment support")
    return alpha


def cmd_estimate(args) -> int:
    data, spec, cards, space = load_data(args.data)
    if not space.is_categorical:
        raise CliError("robust estimation needs categorical treatments")
    alpha = _parse_alpha(args.alpha, space)
    n_strata = int(np.prod(cards)) if cards else 1
    if args.exact_propensity:
        if spec is None or "propensity" not in spec.params:
            raise CliError("exact propensity needs a spec with a propensity table")
        e = PropensityModel.from_table(spec.params["propensity"])
    else:
        e = fit_propensity(data.strata, data.t, n_strata, space.levels, args.smoothing, args.floor)
    if args.predictions:
        m = read_predictions(args.predictions, len(data))
    else:
        if args.checkpoint is None:
            raise CliError("need --checkpoint or --predictions")
        model, meta = load_model(args.checkpoint)
        if model is None:
            raise CliError(f"checkpoint kind {meta.get('kind')!r} cannot predict potential outcomes")
        m = predict_potential_outcomes(model, data.y, data.t, data.x, alpha, np.random.default_rng(args.seed),
                                       deterministic=args.deterministic)
    if args.covariate is not None:
        c = int(args.covariate)
        robust = robust_ate_covariate(data.y, data.t, data.strata, m, e, alpha, c, args.level, args.floor)
        mask = data.strata == c
        plug = plug_in_mean(m[mask], args.level, alpha)
        plug.covariate = c
    else:
        robust = robust_ate(data.y, data.t, data.strata, m, e, alpha, args.level, args.floor)
        plug = plug_in_mean(m, args.level, alpha)
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"robust": robust.to_dict(), "plug_in_mean": plug.to_dict()}
    _write_text(out / "estimates.json", json.dumps(payload, sort_keys=True, indent=1) + "\n")
    _write_text(out / "estimates.csv", reports_csv([robust, plug]))
    print(json.dumps({"robust": payload["robust"]["estimate"], "plug_in_mean": payload["plug_in_mean"]["estimate"]}))
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    data, spec, cards, space = load_data(args.data)
    eval_data = load_data(args.eval_data)[0] if args.eval_data else None
    config = load_config(args.config, _train_overrides(args))
    modes = [MODE_NAMES.get(m.strip().lower(), m.strip()) for m in args.modes.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    latent = spec.latent_dim if spec is not None else None
    rows = ablation_sweep(config, modes, seeds, data, space, cards, latent, eval_data=eval_data, jobs=args.jobs)
    dest = out_path(args.out)
    _write_text(dest, sweep_csv(rows))
    print(f"wrote {len(rows)} rows for {len(modes) * len(seeds)} runs to {dest}")
    return 0


# ---------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--mode", choices=sorted(MODE_NAMES) + sorted(MODE_NAMES.values()))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--disc-lr", dest="disc_lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--supervision", choices=["empirical", "adversarial"])
    p.add_argument("--detach", choices=["target_copy", "fully_attached", "detach_yprime"])
    p.add_argument("--weight-cf", dest="weight_cf", type=float)
    p.add_argument("--weight-kl", dest="weight_kl", type=float)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--eval-period", dest="eval_period", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcilab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a dataset with ground-truth counterfactuals")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="JSON structural model spec")
    src.add_argument("--benchmark", choices=sorted(BENCHMARKS) + ["discrete"])
    g.add_argument("--spec-seed", type=int, default=0, help="seed for benchmark parameters")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model")
    _add_train_flags(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--oracle-replay", action="store_true",
                   help="write a checkpoint that replays the dataset's true counterfactuals")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compute metrics for a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--metrics", default="cf_mse", help=f"comma list from: {', '.join(METRICS)}")
    e.add_argument("--cycles", type=int, default=1)
    e.add_argument("--n-scms", dest="n_scms", type=int, default=100)
    e.add_argument("--max-size", dest="max_size", type=int, default=4)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("estimate", help="robust and plug-in marginal estimates")
    s.add_argument("--checkpoint")
    s.add_argument("--predictions", help="JSONL of (index, m) rows instead of a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--alpha", required=True)
    s.add_argument("--covariate", type=int)
    s.add_argument("--exact-propensity", action="store_true")
    s.add_argument("--smoothing", type=float, default=1.0)
    s.add_argument("--floor", type=float, default=0.01)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--deterministic", action="store_true", help="use posterior means instead of draws")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_estimate)

    a = sub.add_parser("ablate", help="train several modes and seeds; write a counterfactual-MSE table")
    _add_train_flags(a)
    a.add_argument("--data", required=True)
    a.add_argument("--eval-data", dest="eval_data")
    a.add_argument("--modes", default="HAE,HAE_A,SAE,VCI")
    a.add_argument("--seeds", default="0,1,2,3,4")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", required=True, help="CSV path")
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidSpecError as exc:
        print(f"error: invalid spec field {exc.field!r}: {exc}", file=sys.stderr)
    except (CliError, DatasetFormatError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
