"""Operator command line.

Conventions: machine-readable JSON on stdout, human diagnostics on stderr.
Exit codes: 0 success, 1 expected pipeline failure (single-line JSON error on
stderr), 2 usage errors (argparse). Secrets are taken from the environment,
never from flags:

    POCSCREEN_PASSPHRASE / POCSCREEN_KEY_FILE          store secret
    POCSCREEN_NEW_PASSPHRASE / POCSCREEN_NEW_KEY_FILE  rotation target
    POCSCREEN_ADMIN_USER + POCSCREEN_ADMIN_PASSWORD    admin operations
    POCSCREEN_USER_PASSWORD                            `store user add`
    POCSCREEN_EXPORT_KEY                               anonymized export
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import balance as bal
from . import dataset, evaluate, imaging, models
from .access import AccessControl
from .errors import PocscreenError
from .service.config import ServiceConfig
from .service.screening import compute_features
from .vault.crypto import KeyMaterial, decrypt_record, encrypt_record
from .vault.store import RecordStore, derive_master_key


class CliError(Exception):
    pass


def _store_secret_kwargs(env_prefix: str = "POCSCREEN") -> dict:
    passphrase = os.environ.get(f"{env_prefix}_PASSPHRASE")
    key_file = os.environ.get(f"{env_prefix}_KEY_FILE")
    if passphrase and key_file:
        raise CliError("set only one of PASSPHRASE or KEY_FILE")
    if passphrase:
        return {"passphrase": passphrase}
    if key_file:
        raw = Path(key_file).read_bytes()
        if len(raw) != 32:
            raise CliError(f"key file must hold exactly 32 raw bytes, got {len(raw)}")
        return {"master_key": raw}
    raise CliError(f"set {env_prefix}_PASSPHRASE or {env_prefix}_KEY_FILE")


def _open_store(store_dir: str) -> RecordStore:
    return RecordStore.open(store_dir, **_store_secret_kwargs())


def _admin_token(access: AccessControl) -> str:
    username = os.environ.get("POCSCREEN_ADMIN_USER", "admin")
    password = os.environ.get("POCSCREEN_ADMIN_PASSWORD")
    if not password:
        raise CliError("set POCSCREEN_ADMIN_PASSWORD for admin operations")
    return access.authenticate(username, password).token


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


# -- subcommands ----------------------------------------------------------------


def cmd_dataset_validate(args) -> int:
    manifest = Path(args.manifest)
    rows = dataset.load_manifest(manifest)
    issues = dataset.validate_rows(rows, manifest.parent)
    _emit({"rows": len(rows), "issues": issues})
    if issues:
        print(f"{len(issues)} issue(s) across {len(rows)} rows", file=sys.stderr)
        return 1
    return 0


def cmd_balance(args) -> int:
    manifest = Path(args.manifest)
    rows = dataset.load_manifest(manifest)
    labeler = bal.remark_of if args.mode == "remark" else bal.severity_of
    kept, report = bal.kde_undersample_indices(
        [r.hb_gdl for r in rows], labeler, args.seed, mode=args.mode
    )
    if args.out_manifest:
        dataset.write_manifest(args.out_manifest, [rows[i] for i in kept])
    if args.report:
        Path(args.report).write_text(report.to_csv(), encoding="utf-8")
    _emit(json.loads(report.to_json()))
    return 0


_TRAIN_KEYS = {
    "n_trees": int,
    "max_depth": int,
    "min_leaf": int,
    "features_per_split": float,
    "bootstrap": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "learning_rate": float,
    "n_stages": int,
}
_LINEAR_KEYS = {"lam": float, "l1_ratio": float, "delta": float,
                "n_iters": int, "inlier_threshold": float}


def _train_model(name: str, samples, seed: int, options: dict):
    config_kwargs = {k: _TRAIN_KEYS[k](v) for k, v in options.items() if k in _TRAIN_KEYS}
    linear = {k: _LINEAR_KEYS[k](v) for k, v in options.items() if k in _LINEAR_KEYS}
    config = models.TrainConfig(seed=seed, **config_kwargs)
    if name == "rf":
        return models.train_forest(samples, config)
    if name == "gbm":
        return models.train_gbm(samples, config)
    if name == "ridge":
        return models.train_ridge(samples, linear.get("lam", evaluate.RIDGE_LAM))
    if name == "lasso":
        return models.train_lasso(samples, linear.get("lam", evaluate.LASSO_LAM))
    if name == "enet":
        return models.train_elastic_net(
            samples,
            linear.get("lam", evaluate.ENET_LAM),
            linear.get("l1_ratio", evaluate.ENET_L1_RATIO),
        )
    if name == "huber":
        return models.train_huber(
            samples,
            linear.get("delta", evaluate.HUBER_DELTA),
            linear.get("lam", evaluate.HUBER_LAM),
        )
    if name == "ransac":
        return models.train_ransac(
            samples,
            n_iters=int(linear.get("n_iters", evaluate.RANSAC_ITERS)),
            inlier_threshold=linear.get("inlier_threshold", evaluate.RANSAC_THRESHOLD_GDL),
            seed=seed,
        )
    raise CliError(f"unknown model {name!r}")


def cmd_train(args) -> int:
    options = {}
    if args.config:
        from .service.config import parse_kv

        options = parse_kv(Path(args.config).read_text(encoding="utf-8"))
    samples = dataset.load_samples(args.manifest)
    model = _train_model(args.model, samples, args.seed, options)
    blob = models.serialize_model(model)
    Path(args.output).write_bytes(blob)
    _emit(
        {
            "model": args.model,
            "seed": args.seed,
            "samples": len(samples),
            "output": args.output,
            "bytes": len(blob),
        }
    )
    return 0


def cmd_evaluate(args) -> int:
    samples = dataset.load_samples(args.manifest)
    roster = tuple(args.models) if args.models else evaluate.DEFAULT_ROSTER
    result = evaluate.run_survey(samples, args.mode, roster, seed=args.seed)
    Path(args.output).write_text(evaluate.report_csv(result.rows), encoding="utf-8")
    cv_path = Path(args.output).with_suffix(".cv.csv")
    cv_path.write_text(evaluate.cv_report_csv(result.cv_rows), encoding="utf-8")
    points_path = Path(args.output).with_suffix(".points.csv")
    points_path.write_text(evaluate.points_csv(result), encoding="utf-8")
    print(evaluate.format_table(result.rows), file=sys.stderr)
    _emit(
        {
            "mode": args.mode,
            "seed": args.seed,
            "report": args.output,
            "cv_report": str(cv_path),
            "points": str(points_path),
            "rows": [r.model for r in result.rows],
        }
    )
    return 0


def cmd_predict(args) -> int:
    model = models.deserialize_model(Path(args.model).read_bytes())
    image = dataset.load_image(args.image)
    boxes = imaging.parse_annotations(Path(args.annotations).read_text(encoding="utf-8"))
    start = time.perf_counter()
    features = compute_features(image, boxes)
    hb = models.predict(model, features)
    latency_ms = (time.perf_counter() - start) * 1e3
    _emit(
        {
            "predicted_hb_gdl": hb,
            "remark": bal.remark_of(hb).value,
            "severity": bal.severity_of(hb).value,
            "latency_ms": latency_ms,
        }
    )
    return 0


def cmd_bench(args) -> int:
    rng = np.random.default_rng(11)
    if args.op == "crypto":
        keys = KeyMaterial.from_master(bytes(range(32)))
        payload = rng.integers(0, 256, size=10 * 1024, dtype=np.uint8).tobytes()

        def op():
            decrypt_record(encrypt_record(payload, keys), keys)

    else:
        pixels = rng.integers(0, 256, size=(640, 640, 3), dtype=np.uint8)
        patch = imaging.RoiPatch(imaging.RegionClass.NAIL, pixels)
        if args.op == "features":

            def op():
                imaging.extract_features([patch], [])

        else:  # predict: full feature + inference path
            train = rng.normal(size=(64, imaging.N_FEATURES))
            target = 10 + 4 * rng.random(64)
            forest = models.train_forest((train, target), models.TrainConfig(seed=3))

            def op():
                fv = imaging.extract_features([patch], [])
                models.predict(forest, fv)

    stats = evaluate.benchmark_latency(op, n_warmup=args.warmup, n_runs=args.runs, op_name=args.op)
    print(stats.to_json())
    return 0


def cmd_store_init(args) -> int:
    store = RecordStore.create(args.store, **_store_secret_kwargs())
    try:
        access = AccessControl(store)
        username = os.environ.get("POCSCREEN_ADMIN_USER", "admin")
        password = os.environ.get("POCSCREEN_ADMIN_PASSWORD")
        if not password:
            raise CliError("set POCSCREEN_ADMIN_PASSWORD to provision the first admin")
        access.bootstrap_admin(username, password)
        _emit({"store": args.store, "device_id": store.device_id, "admin": username})
    finally:
        store.close()
    return 0


def cmd_store_rotate(args) -> int:
    with _open_store(args.store) as store:
        new_passphrase = os.environ.get("POCSCREEN_NEW_PASSPHRASE")
        new_key_file = os.environ.get("POCSCREEN_NEW_KEY_FILE")
        if new_passphrase:
            report = store.rotate_keys(new_passphrase=new_passphrase)
        elif new_key_file:
            raw = Path(new_key_file).read_bytes()
            if len(raw) != 32:
                raise CliError("new key file must hold exactly 32 raw bytes")
            report = store.rotate_keys(new_master_key=raw)
        else:
            raise CliError("set POCSCREEN_NEW_PASSPHRASE or POCSCREEN_NEW_KEY_FILE")
        _emit(report)
    return 0


def cmd_store_user(args) -> int:
    with _open_store(args.store) as store:
        access = AccessControl(store)
        roles = [r.strip() for r in args.roles.split(",") if r.strip()]
        token = _admin_token(access)
        if args.user_action == "add":
            password = os.environ.get("POCSCREEN_USER_PASSWORD")
            if not password:
                raise CliError("set POCSCREEN_USER_PASSWORD for the new user")
            user = access.create_user(token, args.username, password, roles)
        else:  # role
            user = access.set_roles(token, args.username, roles)
        _emit({"username": user.username, "roles": sorted(user.roles)})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import ServiceContext, create_app
    from .service.sync import SyncEngine

    config = ServiceConfig.from_file(args.config)
    store = RecordStore.open(config.store_path, **_store_secret_kwargs())
    model = None
    model_version = ""
    if config.model_path:
        blob = Path(config.model_path).read_bytes()
        model = models.deserialize_model(blob)
        import hashlib

        model_version = hashlib.sha256(blob).hexdigest()[:12]
    access = AccessControl(store, session_ttl_s=config.session_ttl_hours * 3600)
    ctx = ServiceContext(
        store=store,
        access=access,
        engine=SyncEngine(store),
        config=config,
        model=model,
        model_version=model_version,
    )
    print(
        f"serving on {config.listen_host}:{config.listen_port} "
        f"(store {config.store_path}, model {config.model_path or 'none'})",
        file=sys.stderr,
    )
    uvicorn.run(create_app(ctx), host=config.listen_host, port=config.listen_port)
    return 0


def cmd_export(args) -> int:
    from .service.export import export_anonymized

    key = os.environ.get("POCSCREEN_EXPORT_KEY", "")
    if not key and args.config:
        key = ServiceConfig.from_file(args.config).export_key
    if not key:
        raise CliError("set POCSCREEN_EXPORT_KEY or configure export_key")
    with _open_store(args.store) as store:
        with open(args.out, "w", encoding="utf-8") as fh:
            count = 0
            for line in export_anonymized(store, key.encode("utf-8")):
                fh.write(line + "\n")
                count += 1
    _emit({"out": args.out, "lines": count})
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pocscreen")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="dataset utilities")
    dsub = p.add_subparsers(dest="dataset_action", required=True)
    v = dsub.add_parser("validate", help="check manifest, images, annotations")
    v.add_argument("manifest")
    v.set_defaults(func=cmd_dataset_validate)

    p = sub.add_parser("balance", help="KDE-undersample a manifest")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=["remark", "severity"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-manifest")
    p.add_argument("--report")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("train", help="train a regressor from a manifest")
    p.add_argument("manifest")
    p.add_argument(
        "--model",
        choices=["rf", "gbm", "ridge", "lasso", "enet", "huber", "ransac"],
        required=True,
    )
    p.add_argument("--config", help="flat key=value hyperparameter file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the model survey, emit report.csv")
    p.add_argument("manifest")
    p.add_argument("models", nargs="*", help="roster subset (default: full survey)")
    p.add_argument("--mode", choices=["remark", "severity"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="report.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="screen one image")
    p.add_argument("model")
    p.add_argument("image")
    p.add_argument("annotations")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="latency benchmarks")
    p.add_argument("--op", choices=["features", "predict", "crypto"], required=True)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--warmup", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("store", help="vault and user administration")
    ssub = p.add_subparsers(dest="store_action", required=True)
    s = ssub.add_parser("init")
    s.add_argument("--store", required=True)
    s.set_defaults(func=cmd_store_init)
    s = ssub.add_parser("rotate-keys")
    s.add_argument("--store", required=True)
    s.set_defaults(func=cmd_store_rotate)
    s = ssub.add_parser("user")
    s.add_argument("user_action", choices=["add", "role"])
    s.add_argument("--store", required=True)
    s.add_argument("--username", required=True)
    s.add_argument("--roles", required=True, help="comma-separated role names")
    s.set_defaults(func=cmd_store_user)

    p = sub.add_parser("serve", help="start the REST service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", help="anonymized CSV export")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, PocscreenError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
