"""Command-line entry point: ``fsscore <subcommand>``.

Options may also come from a TOML file given with ``--config``; keys in the
top level or in a table named after the subcommand become defaults, and
flags on the command line win. With ``--server`` the ``score``, ``label``
and ``finetune`` subcommands talk to a running service instead of working
on local files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import tomli

from .datapipe import CorpusError, build_corpus, make_chirality_pairs, read_pairs_csv, write_pairs_csv
from .metrics import ConfusionCounts, MetricError, auc, binary_metrics, pcc
from .model import ARCHITECTURES, CheckpointError, ConfigError, ModelConfig, init_model, load_checkpoint, save_checkpoint
from .pairing import ClusteringError
from .reward import (DOCKING, FSSCORE, MOLECULAR_WEIGHT, SA_SCORE, DoubleSigmoidTransform, SigmoidTransform,
                     double_sigmoid_reward, sigmoid_reward)
from .training import InsufficientDataError, PreferencePair, TrainConfig, TrainingError, evaluate_pairs, finetune, pretrain
from .workflow import (InputError, rank_molecule_pairs, read_column, read_ranked_pairs, score_molecules,
                       target_from_harder, write_ranked_pairs, write_scores)

log = logging.getLogger("fsscore")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CHECKPOINT = 4
EXIT_DATA = 5
EXIT_TRAINING = 6
EXIT_SERVER = 7

REWARD_PRESETS = {"fsscore": FSSCORE, "docking": DOCKING, "sa": SA_SCORE}


class ServerError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# local subcommands


def cmd_pair(args) -> int:
    smiles = read_column(args.input, "smiles")
    model = load_checkpoint(args.checkpoint)
    ranked = rank_molecule_pairs(model, smiles, seed=args.seed, n_samples=args.samples, rate=args.rate,
                                 mode=args.mode, criterion=args.criterion)
    write_ranked_pairs(args.output, ranked)
    log.info("wrote %d ranked pairs to %s", len(ranked), args.output)
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    return ModelConfig(architecture=args.architecture, hidden_dim=args.hidden_dim, heads=args.heads,
                       seed=args.seed).validate()


def cmd_pretrain(args) -> int:
    pairs = read_pairs_csv(args.pairs)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else init_model(_model_config(args))
    cfg = TrainConfig(chunks=args.chunks, epochs_per_chunk=args.epochs_per_chunk, batch_size=args.batch_size,
                      lr=args.lr, seed=args.seed)
    out = Path(args.output)
    model, history = pretrain(model, pairs, cfg, history_path=out / "history.jsonl")
    save_checkpoint(model, out, {"pretrained_on": str(args.pairs), "n_pairs": len(pairs)})
    print(f"final loss {history[-1]['loss']:.4f} accuracy {history[-1]['accuracy']:.3f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    if args.server:
        return _remote_finetune(args)
    if not args.checkpoint or not args.pairs:
        raise InputError("finetune needs --checkpoint and --pairs (or --server and --session)")
    model = load_checkpoint(args.checkpoint)
    pairs = read_pairs_csv(args.pairs)
    holdout = read_pairs_csv(args.holdout) if args.holdout else None
    cfg = TrainConfig(ft_batch_size=args.batch_size, ft_lr=args.lr, max_epochs=args.max_epochs, seed=args.seed)
    out = Path(args.output)
    tuned, history = finetune(model, pairs, cfg, holdout=holdout, validation=not args.production,
                              history_path=out / "history.jsonl")
    stop = history[-1]
    save_checkpoint(tuned, out, {"parent": str(args.checkpoint), "n_labels": len(pairs),
                                 "stop_reason": stop["reason"], "epochs": stop["epoch"]})
    print(f"stopped after epoch {stop['epoch']} ({stop['reason']})")
    return EXIT_OK


def cmd_score(args) -> int:
    smiles = read_column(args.input, "smiles")
    if args.server:
        reply = _request(args.server, "POST", "/api/score", {"v": 1, "smiles": smiles, "model": args.model})
        values = [item["score"] for item in reply["scores"]]
    else:
        if not args.checkpoint:
            raise InputError("score needs --checkpoint or --server")
        values = score_molecules(load_checkpoint(args.checkpoint), smiles)
    write_scores(args.output, smiles, values)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.pairs:
        pairs = read_pairs_csv(args.pairs)
        res = evaluate_pairs(model, pairs)
        print(f"pairs      {res['n']}")
        print(f"accuracy   {res['accuracy']:.4f}")
        print(f"auc        {res['auc']:.4f}")
        return EXIT_OK
    smiles = read_column(args.molecules, "smiles")
    scores = score_molecules(model, smiles)
    with open(args.molecules, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if (r["smiles"] or "").strip()]
    if "label" in rows[0]:
        y = np.array([int(r["label"]) for r in rows])
        if args.threshold is not None:
            m = binary_metrics(ConfusionCounts.from_predictions(scores >= args.threshold, y))
            for name in ("accuracy", "sensitivity", "specificity"):
                v = getattr(m, name)
                print(f"{name:<11}{'undefined' if v is None else f'{v:.4f}'}")
        print(f"auc        {auc(scores, y):.4f}")
    if "value" in rows[0]:
        print(f"pcc        {pcc(scores, [float(r['value']) for r in rows]):.4f}")
    if "label" not in rows[0] and "value" not in rows[0]:
        raise InputError(f"{args.molecules}: needs a 'label' or 'value' column")
    return EXIT_OK


def cmd_build_corpus(args) -> int:
    summary = build_corpus(args.input, args.output, args.test_fraction, args.reactant_col, args.product_col)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_chirality_pairs(args) -> int:
    smiles = read_column(args.input, "smiles")
    write_pairs_csv(make_chirality_pairs(smiles, args.n, args.seed), args.output)
    return EXIT_OK


def cmd_reward(args) -> int:
    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        if args.column not in (reader.fieldnames or []):
            raise InputError(f"{args.input}: missing required column '{args.column}'")
        fields = list(reader.fieldnames)
        rows = list(reader)
    x = np.array([float(r[args.column]) for r in rows])
    if args.transform == "mw":
        reward = double_sigmoid_reward(x, DoubleSigmoidTransform(args.lower, args.upper))
    elif args.transform == "custom":
        if args.a is None or args.b is None:
            raise InputError("--transform custom needs --a and --b")
        reward = sigmoid_reward(x, SigmoidTransform(args.a, args.b, args.k))
    else:
        reward = sigmoid_reward(x, REWARD_PRESETS[args.transform])
    with open(args.output, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields + ["reward"], lineterminator="\n")
        w.writeheader()
        for r, v in zip(rows, np.atleast_1d(reward)):
            w.writerow({**r, "reward": repr(float(v))})
    return EXIT_OK


def cmd_label(args) -> int:
    """Terminal labelling: for each pair type i or j for the harder molecule, s to skip, q to stop."""
    if args.server:
        return _remote_label(args)
    if not args.input:
        raise InputError("label needs --input (or --server and --session)")
    ranked = read_ranked_pairs(args.input)
    labelled = []
    for u in ranked:
        answer = _ask(u.pair.smiles_i, u.pair.smiles_j)
        if answer == "q":
            break
        if answer == "s":
            continue
        p = u.pair
        labelled.append(PreferencePair(p.smiles_i, p.smiles_j, target_from_harder(answer), source="label"))
    write_pairs_csv(labelled, args.output)
    print(f"{len(labelled)} labels written to {args.output}")
    return EXIT_OK


def _ask(smiles_i: str, smiles_j: str) -> str:
    print(f"  i: {smiles_i}\n  j: {smiles_j}")
    while True:
        line = sys.stdin.readline()
        if not line:
            return "q"
        answer = line.strip().lower()
        if answer in ("i", "j", "s", "q"):
            return answer
        print("answer i or j (harder molecule), s to skip, q to quit")


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(args.data_root, args.checkpoint, args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------
# thin client


def _request(server: str, method: str, path: str, body: dict | None = None, params: dict | None = None) -> dict:
    import httpx

    try:
        resp = httpx.request(method, server.rstrip("/") + path, json=body, params=params, timeout=600.0)
    except httpx.HTTPError as exc:
        raise ServerError(f"cannot reach {server}: {exc}") from exc
    if resp.status_code >= 400:
        raise ServerError(f"{method} {path} -> {resp.status_code}: {resp.text}")
    return resp.json()


def _remote_label(args) -> int:
    if not args.session:
        raise InputError("label --server needs --session")
    count = 0
    while True:
        reply = _request(args.server, "GET", "/api/pairs/next", params={"session": args.session})
        if reply["exhausted"]:
            break
        pair = reply["pair"]
        answer = _ask(pair["smiles_i"], pair["smiles_j"])
        if answer in ("q", "s"):
            break
        _request(args.server, "POST", "/api/labels",
                 {"v": 1, "session": args.session, "pair_id": pair["pair_id"], "harder": answer})
        count += 1
    print(f"{count} labels sent")
    return EXIT_OK


def _remote_finetune(args) -> int:
    if not args.session:
        raise InputError("finetune --server needs --session")
    body = {"v": 1, "session": args.session, "batch_size": args.batch_size, "max_epochs": args.max_epochs,
            "lr": args.lr, "validation": not args.production, "seed": args.seed}
    job = _request(args.server, "POST", "/api/finetune", body)
    while job["state"] in ("queued", "running"):
        time.sleep(args.poll)
        job = _request(args.server, "GET", f"/api/jobs/{job['id']}")
    print(json.dumps(job, indent=2))
    return EXIT_OK if job["state"] == "done" else EXIT_TRAINING


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsscore", description="Learned synthetic feasibility scoring")
    p.add_argument("--config", help="TOML file with option defaults")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("pair", cmd_pair, "cluster, pair and rank molecules by uncertainty")
    sp.add_argument("--input", required=True, help="CSV with a 'smiles' column")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--samples", type=int, default=100, help="MC dropout passes")
    sp.add_argument("--rate", type=float, default=0.2, help="MC dropout rate")
    sp.add_argument("--mode", choices=("unique", "overlapping"), default="unique")
    sp.add_argument("--criterion", choices=("max", "min"), default="max", help="silhouette selection rule")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("pretrain", cmd_pretrain, "train a model on reactant/product pairs")
    sp.add_argument("--pairs", required=True, help="CSV smiles_i,smiles_j,target")
    sp.add_argument("--output", required=True, help="checkpoint directory to write")
    sp.add_argument("--checkpoint", help="continue from this checkpoint instead of a fresh model")
    sp.add_argument("--architecture", choices=ARCHITECTURES, default="GGLGGL")
    sp.add_argument("--hidden-dim", type=int, default=128)
    sp.add_argument("--heads", type=int, default=8)
    sp.add_argument("--chunks", type=int, default=25)
    sp.add_argument("--epochs-per-chunk", type=int, default=10)
    sp.add_argument("--batch-size", type=int, default=128)
    sp.add_argument("--lr", type=float, default=3e-4)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("finetune", cmd_finetune, "fine-tune a checkpoint on labelled pairs")
    sp.add_argument("--checkpoint")
    sp.add_argument("--pairs", help="labelled CSV smiles_i,smiles_j,target")
    sp.add_argument("--output", default="finetuned")
    sp.add_argument("--holdout", help="labelled pairs whose accuracy is monitored")
    sp.add_argument("--production", action="store_true", help="no validation split; monitor training loss")
    sp.add_argument("--lr", type=float, default=None, help="default 1e-4 for graphs, 3e-4 for fingerprints")
    sp.add_argument("--batch-size", type=int, default=4)
    sp.add_argument("--max-epochs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--server", help="service URL; fine-tune a session there")
    sp.add_argument("--session")
    sp.add_argument("--poll", type=float, default=1.0, help="seconds between job polls")

    sp = add("score", cmd_score, "score molecules")
    sp.add_argument("--input", required=True, help="CSV with a 'smiles' column")
    sp.add_argument("--output", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--server")
    sp.add_argument("--model", help="model id on the server (default: latest)")

    sp = add("eval", cmd_eval, "evaluate a checkpoint")
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--pairs", help="labelled pair CSV")
    grp.add_argument("--molecules", help="CSV with smiles and a 'label' and/or 'value' column")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--threshold", type=float, help="score threshold for accuracy/sensitivity/specificity")

    sp = add("build-corpus", cmd_build_corpus, "filter, de-cycle and split reaction pairs")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True, help="output directory")
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--reactant-col", default="reactant")
    sp.add_argument("--product-col", default="product")

    sp = add("chirality-pairs", cmd_chirality_pairs, "pair stereo molecules with their flat forms")
    sp.add_argument("--input", required=True, help="CSV with a 'smiles' column")
    sp.add_argument("--output", required=True)
    sp.add_argument("-n", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("reward", cmd_reward, "map a score column to a [0, 1] reward")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--column", default="score")
    sp.add_argument("--transform", choices=sorted(REWARD_PRESETS) + ["custom", "mw"], default="fsscore")
    sp.add_argument("--a", type=float, help="custom sigmoid: value mapped towards 0")
    sp.add_argument("--b", type=float, help="custom sigmoid: value mapped towards 1")
    sp.add_argument("--k", type=float, default=0.25, help="custom sigmoid steepness")
    sp.add_argument("--lower", type=float, default=MOLECULAR_WEIGHT.a, help="mw: lower bound")
    sp.add_argument("--upper", type=float, default=MOLECULAR_WEIGHT.b, help="mw: upper bound")

    sp = add("label", cmd_label, "label ranked pairs in the terminal")
    sp.add_argument("--input", help="ranked pair CSV from 'pair'")
    sp.add_argument("--output", default="labels.csv")
    sp.add_argument("--server")
    sp.add_argument("--session")

    sp = add("serve", cmd_serve, "run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--data-root", help="defaults to $FSSCORE_DATA or ./fsscore-data")
    sp.add_argument("--checkpoint", help="base model checkpoint")
    sp.add_argument("--ui", help="directory of static UI files to serve at /")
    return p


def _config_defaults(path: str, command: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    flat.update(data.get(command, {}))
    return {k.replace("-", "_"): v for k, v in flat.items()}


def _subcommands(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        subs = _subcommands(parser)
        command = next((a for a in argv if a in subs), None)
        if command is not None:
            sub = subs[command]
            defaults = _config_defaults(known.config, command)
            unknown = sorted(set(defaults) - {a.dest for a in sub._actions})
            if unknown:
                raise InputError(f"config {known.config}: unknown option(s) for {command}: {', '.join(unknown)}")
            # required flags satisfied by the config must not be demanded again
            for action in sub._actions:
                if action.dest in defaults:
                    action.required = False
            sub.set_defaults(**defaults)
    return parser.parse_args(argv)


_ERRORS = (
    (InputError, EXIT_INPUT),
    (CorpusError, EXIT_INPUT),
    (CheckpointError, EXIT_CHECKPOINT),
    (ConfigError, EXIT_CHECKPOINT),
    (InsufficientDataError, EXIT_DATA),
    (ClusteringError, EXIT_DATA),
    (MetricError, EXIT_DATA),
    (TrainingError, EXIT_TRAINING),
    (ServerError, EXIT_SERVER),
)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except tuple(e for e, _ in _ERRORS) as exc:
        code = next(c for e, c in _ERRORS if isinstance(exc, e))
        print(f"error: {exc}", file=sys.stderr)
        return code
    except ValueError as exc:  # malformed values inside otherwise readable files
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
