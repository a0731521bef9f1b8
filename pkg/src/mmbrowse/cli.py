"""Command-line pipeline: gen-catalog, gen-dialogs, train-corrnet,
train-agent, evaluate, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import catalog as cat
from .errors import MMBrowseError
from .numerics import STREAM_CATALOG, stream_rng


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MMBrowseError(f"file not found: {path}")
    return p


def _meta_path(catalog_path: str, override: str | None) -> Path:
    return Path(override) if override else Path(catalog_path).with_suffix(".meta.json")


def _load_bundle(args):
    """Catalog + vocab + re-derived encodings for downstream commands."""
    catalog_path = _require_file(args.catalog)
    meta_path = _require_file(str(_meta_path(args.catalog, getattr(args, "meta", None))))
    vocab, meta = cat.load_vocabulary(meta_path)
    products = cat.load_catalog(catalog_path, vocab)
    encoded = cat.EncodedCatalog.from_products(
        products, vocab, meta["catalog_seed"], meta["sigma_img"])
    return vocab, products, encoded, meta


def cmd_gen_catalog(args) -> int:
    config = cat.VocabConfig.paper_scale() if args.paper_scale else cat.VocabConfig()
    rng = stream_rng(args.seed, STREAM_CATALOG)
    vocab = cat.build_vocabulary(config, rng)
    products = cat.generate_catalog(vocab, args.n, rng)
    cat.save_catalog(products, args.out)
    cat.save_vocabulary(
        vocab, _meta_path(args.out, args.meta),
        extra={"catalog_seed": args.seed, "sigma_img": args.sigma_img},
    )
    if args.features_out:
        encoded = cat.EncodedCatalog.from_products(products, vocab, args.seed,
                                                   args.sigma_img)
        cat.save_features(encoded, args.features_out)
    print(f"wrote {len(products)} products to {args.out}")
    return 0


def cmd_gen_dialogs(args) -> int:
    from . import simulator as sim

    vocab, products, encoded, _ = _load_bundle(args)
    config = sim.FsaConfig.load(_require_file(args.fsa_config)) if args.fsa_config \
        else sim.FsaConfig()
    sessions = sim.generate_dataset(vocab, products, encoded, config,
                                    args.sessions, args.seed)
    sim.save_sessions(sessions, args.out)
    rounds = sum(len(s.rounds) for s in sessions)
    print(f"wrote {len(sessions)} sessions ({rounds} rounds) to {args.out}")
    return 0


def cmd_train_corrnet(args) -> int:
    from . import corrnet as cn

    _, _, encoded, _ = _load_bundle(args)
    config = cn.CorrNetTrainConfig(
        k=args.k, lam=args.lam, learning_rate=args.lr,
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
    )
    result = cn.train_corrnet(encoded, config)
    cn.save_corrnet(result, args.out)
    print(f"corrnet trained: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; "
          f"saved to {args.out}")
    return 0


def _load_training_sets(args, vocab, encoded):
    from . import agent as ag
    from . import corrnet as cn
    from . import simulator as sim

    params, stats = cn.load_corrnet(_require_file(args.corrnet))
    space = cn.ProjectionSpace(params, stats, encoded)
    sessions = sim.load_sessions(_require_file(args.sessions))
    hyper = ag.AgentHyper(
        n_gaussians=args.gaussians, tau=args.tau, eta=args.eta,
        window=args.window, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.seed,
    )
    train, test = ag.build_training_set(sessions, space, vocab, hyper)
    return space, hyper, train, test


def cmd_train_agent(args) -> int:
    from . import agent as ag

    vocab, _, encoded, _ = _load_bundle(args)
    _, hyper, train, test = _load_training_sets(args, vocab, encoded)
    result = ag.train_agent(train, hyper)
    metrics = {}
    if test:
        metrics["test_mean_cosine"] = ag.evaluate(result.params, test, hyper,
                                                  seed=args.seed)
    ag.save_agent(result, args.out, metrics=metrics)
    print(f"agent trained: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; "
          f"saved to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from . import agent as ag

    vocab, _, encoded, _ = _load_bundle(args)
    _, hyper, train, test = _load_training_sets(args, vocab, encoded)
    params, stored_hyper = ag.load_agent(_require_file(args.agent))
    hyper.n_gaussians = stored_hyper.n_gaussians
    hyper.tau = stored_hyper.tau
    hyper.window = stored_hyper.window
    hyper.n_display = stored_hyper.n_display

    baseline = ag.init_agent_params(hyper, params.k,
                                    stream_rng(hyper.seed, 4, 0))
    metrics = {
        "n_train_rounds": len(train),
        "n_test_rounds": len(test),
        "seed": args.seed,
        "test_mean_cosine": ag.evaluate(params, test, hyper, seed=args.seed),
        "baseline_mean_cosine": ag.evaluate(baseline, test, hyper, seed=args.seed),
        "train_mean_cosine": ag.evaluate(params, train, hyper, seed=args.seed),
    }
    out = json.dumps(metrics, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(out + "\n", encoding="utf-8")
    print(out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from . import agent as ag
    from . import corrnet as cn
    from . import service as svc
    from . import simulator as sim

    vocab, products, encoded, _ = _load_bundle(args)
    params, stats = cn.load_corrnet(_require_file(args.corrnet))
    space = cn.ProjectionSpace(params, stats, encoded)
    agent_params = agent_hyper = None
    if args.agent:
        agent_params, agent_hyper = ag.load_agent(_require_file(args.agent))
    fsa = sim.FsaConfig.load(_require_file(args.fsa_config)) if args.fsa_config \
        else sim.FsaConfig()
    engine = svc.Engine(vocab, products, encoded, space,
                        agent_params=agent_params, agent_hyper=agent_hyper,
                        fsa_config=fsa, seed=args.seed)
    ui_dir = Path(args.ui_dir) if args.ui_dir else svc.default_ui_dir()
    app = svc.create_app(engine, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmbrowse",
        description="multi-modal catalog browsing: data generation, training, serving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True):
        p.add_argument("--seed", type=int, default=0, help="master seed")
        if out_required:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("gen-catalog", help="generate a synthetic product catalog")
    p.add_argument("--n", type=int, default=3500, help="number of products")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the full 648-token vocabulary")
    p.add_argument("--sigma-img", type=float, default=cat.DEFAULT_SIGMA_IMG)
    p.add_argument("--meta", help="vocabulary/meta sidecar path "
                                  "(default: <out>.meta.json)")
    p.add_argument("--features-out", help="also dump encoded features (binary)")
    common(p)
    p.set_defaults(func=cmd_gen_catalog)

    def catalog_arg(p):
        p.add_argument("--catalog", required=True, help="catalog JSONL path")
        p.add_argument("--meta", help="meta sidecar path (default: <catalog>.meta.json)")

    p = sub.add_parser("gen-dialogs", help="simulate multi-modal dialog sessions")
    catalog_arg(p)
    p.add_argument("--sessions", type=int, default=5000, dest="sessions")
    p.add_argument("--fsa-config", help="automaton config JSON")
    common(p)
    p.set_defaults(func=cmd_gen_dialogs)

    p = sub.add_parser("train-corrnet", help="train the joint embedding")
    catalog_arg(p)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--lambda", type=float, default=2.0, dest="lam")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    common(p)
    p.set_defaults(func=cmd_train_corrnet)

    def agent_args(p):
        catalog_arg(p)
        p.add_argument("--sessions", required=True, help="dialog sessions JSONL")
        p.add_argument("--corrnet", required=True, help="trained corrnet file")
        p.add_argument("--gaussians", type=int, default=3)
        p.add_argument("--tau", type=float, default=1.0)
        p.add_argument("--eta", type=float, default=0.1)
        p.add_argument("--window", type=int, default=3)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--epochs", type=int, default=40)

    p = sub.add_parser("train-agent", help="train the GMM sampling agent")
    agent_args(p)
    common(p)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("evaluate", help="evaluate a trained agent on the test split")
    agent_args(p)
    p.add_argument("--agent", required=True, help="trained agent file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="metrics JSON output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="serve the interactive browsing API and UI")
    catalog_arg(p)
    p.add_argument("--corrnet", required=True)
    p.add_argument("--agent", help="trained agent file (enables agent mode)")
    p.add_argument("--fsa-config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--ui-dir", help="static UI bundle directory")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MMBrowseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
