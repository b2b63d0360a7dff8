"""Command line interface: thin, synth, eval, anscombe, serve.

`thin` runs in-process by default; given --server it acts as a thin
client of a running service instance, streaming batches over HTTP.
"""

import argparse
import json
import sys

import numpy as np

from .anscombe import anscombe
from .config import EngineConfig
from .engine import ObservationBatch, OnlineThinner
from .metrics import auc_score, best_threshold, detection_rates
from .stream_io import read_stream, write_binary
from .sweeps import DEFAULT_SEEDS, tradeoff_sweep, write_sweep_csv
from .synthetic import SyntheticConfig, gen_synthetic

ENGINE_FLAGS = (
    ("alpha", float),
    ("tau", float),
    ("tol", float),
    ("gamma", float),
    ("rank", int),
    ("noise_var", float),
    ("k_max", int),
    ("subsample_rate", float),
    ("seed", int),
    ("init_depth", int),
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="othin",
        description="streaming data thinning via a dynamic low-rank Gaussian mixture tree",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    thin = sub.add_parser("thin", help="score a stream and emit the flagged subset")
    thin.add_argument("--input", required=True, help="stream file (csv or bin)")
    thin.add_argument("--format", choices=["csv", "bin"], default="csv")
    thin.add_argument("--batch-size", type=int, default=100)
    thin.add_argument("--header", action="store_true", help="skip a CSV header row")
    thin.add_argument(
        "--time-col", action="store_true",
        help="first CSV column is a time index; batches break on changes",
    )
    thin.add_argument(
        "--train", type=int, default=1000,
        help="leading observations used to fit the initial model",
    )
    thin.add_argument("--config", help="JSON file with engine config fields")
    for name, typ in ENGINE_FLAGS:
        thin.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    thin.add_argument("--out", default="-", help="flagged-record JSON-lines output, - for stdout")
    thin.add_argument("--checkpoint", help="write the final engine checkpoint JSON here")
    thin.add_argument("--resume", help="resume from a checkpoint JSON (no training phase)")
    thin.add_argument("--server", help="base URL of a running othin service")

    synth = sub.add_parser("synth", help="emit a labeled synthetic stream")
    synth.add_argument("--p", type=int, default=100)
    synth.add_argument("--rank", type=int, default=10)
    synth.add_argument("--delta", type=float, default=0.0)
    synth.add_argument("--total", type=int, default=4000)
    synth.add_argument("--train", type=int, default=1000)
    synth.add_argument("--noise-var", type=float, default=0.1)
    synth.add_argument("--inlier-frac", type=float, default=0.95)
    synth.add_argument("--n-subspaces", type=int, default=3)
    synth.add_argument("--obs-per-step", type=int, default=1)
    synth.add_argument("--coeff-std", type=float, default=2.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--format", choices=["csv", "bin"], default="csv")
    synth.add_argument("--out", required=True)
    synth.add_argument("--labels-out")

    ev = sub.add_parser("eval", help="detection metrics or tradeoff sweeps")
    ev.add_argument("--scores", help="file with one score per line")
    ev.add_argument("--labels", help="file with one 0/1 label per line")
    ev.add_argument("--tau", type=float)
    ev.add_argument("--best", action="store_true", help="tune tau to minimize detection error")
    ev.add_argument("--sweep", choices=["subsample", "batch"])
    ev.add_argument("--grid", help="comma-separated grid values")
    ev.add_argument("--delta", type=float, default=5e-3)
    ev.add_argument("--seeds", type=int, default=len(DEFAULT_SEEDS))
    ev.add_argument("--batch-size", type=int, default=100)
    ev.add_argument("--rank", type=int, default=10)
    ev.add_argument("--p", type=int, default=100)
    ev.add_argument("--total", type=int, default=4000)
    ev.add_argument("--train", type=int, default=1000)
    ev.add_argument("--out", help="CSV output for sweep results")

    ans = sub.add_parser("anscombe", help="variance-stabilize count CSV rows")
    ans.add_argument("--input", required=True)
    ans.add_argument("--out", default="-")
    ans.add_argument("--header", action="store_true")

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _engine_config(args):
    fields = {}
    if args.config:
        with open(args.config) as fh:
            fields.update(json.load(fh))
    for name, _ in ENGINE_FLAGS:
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    return EngineConfig.from_dict(fields)


def _open_out(path):
    return sys.stdout if path == "-" else open(path, "w")


def _training_split(batches, train_count):
    """Pull whole batches until the training quota is met.

    Returns (training matrix, leftover batch or None); the stream
    iterator continues from where training stopped.
    """
    collected = []
    have = 0
    for batch in batches:
        collected.append(batch.data)
        have += batch.data.shape[1]
        if have >= train_count:
            break
    if have < train_count:
        raise ValueError(f"stream has only {have} observations, need {train_count} for training")
    full = np.hstack(collected)
    training, rest = full[:, :train_count], full[:, train_count:]
    leftover = ObservationBatch(0, rest) if rest.shape[1] else None
    return training, leftover


def _cmd_thin(args):
    batches = read_stream(
        args.input, args.format, batch_size=args.batch_size,
        header=args.header, time_col=args.time_col,
    )
    if args.server:
        return _thin_via_server(args, batches)
    if args.resume:
        with open(args.resume) as fh:
            engine = OnlineThinner.from_checkpoint(json.load(fh))
        leftover = None
    else:
        engine = OnlineThinner(_engine_config(args))
        training, leftover = _training_split(batches, args.train)
        engine.fit_initial(training)

    def stream():
        t = 0
        if leftover is not None:
            yield ObservationBatch(t, leftover.data)
            t += 1
        for batch in batches:
            yield ObservationBatch(t, batch.data)
            t += 1

    out = _open_out(args.out)
    try:
        summary = engine.run_stream(stream(), sink=out)
    finally:
        if out is not sys.stdout:
            out.close()
    if args.checkpoint:
        with open(args.checkpoint, "w") as fh:
            json.dump(engine.to_checkpoint(), fh)
    print(json.dumps(summary.to_dict()), file=sys.stderr)
    return 0


def _thin_via_server(args, batches):
    import httpx

    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=120.0) as client:
        if args.resume:
            with open(args.resume) as fh:
                r = client.post("/sessions/restore", json={"checkpoint": json.load(fh)})
            r.raise_for_status()
            leftover = None
        else:
            training, leftover = _training_split(batches, args.train)
            config = _engine_config(args)
            r = client.post(
                "/sessions",
                json={"config": config.to_dict(), "training": training.T.tolist()},
            )
            r.raise_for_status()
        session = r.json()["session_id"]
        out = _open_out(args.out)
        flagged = observations = n_batches = 0
        try:
            def feed():
                if leftover is not None:
                    yield leftover
                yield from batches

            for t, batch in enumerate(feed()):
                r = client.post(
                    f"/sessions/{session}/batches",
                    json={"data": batch.data.T.tolist(), "time_index": t},
                )
                r.raise_for_status()
                body = r.json()
                n_batches += 1
                for rec in body["observations"]:
                    observations += 1
                    if rec["flagged"]:
                        flagged += 1
                        out.write(json.dumps(
                            {"t": rec["t"], "i": rec["i"], "score": rec["score"], "leaf": rec["leaf"]}
                        ) + "\n")
            if args.checkpoint:
                r = client.get(f"/sessions/{session}/checkpoint")
                r.raise_for_status()
                with open(args.checkpoint, "w") as fh:
                    json.dump(r.json()["checkpoint"], fh)
        finally:
            if out is not sys.stdout:
                out.close()
            client.delete(f"/sessions/{session}")
    print(json.dumps({"batches": n_batches, "observations": observations, "flagged": flagged}), file=sys.stderr)
    return 0


def _cmd_synth(args):
    config = SyntheticConfig(
        ambient_dim=args.p,
        subspace_rank=args.rank,
        n_subspaces=args.n_subspaces,
        inlier_fraction=args.inlier_frac,
        noise_var=args.noise_var,
        rotation_speed=args.delta,
        total=args.total,
        train_count=args.train,
        seed=args.seed,
        obs_per_step=args.obs_per_step,
        coeff_std=args.coeff_std,
    )
    X, labels = gen_synthetic(config)
    if args.format == "bin":
        write_binary(args.out, X)
    else:
        with open(args.out, "w") as fh:
            for i in range(X.shape[1]):
                fh.write(",".join(repr(float(v)) for v in X[:, i]) + "\n")
    if args.labels_out:
        with open(args.labels_out, "w") as fh:
            fh.writelines(f"{int(v)}\n" for v in labels)
    print(
        json.dumps({"observations": X.shape[1], "dim": X.shape[0], "anomalies": int(labels.sum())}),
        file=sys.stderr,
    )
    return 0


def _cmd_eval(args):
    if args.sweep:
        if not args.grid:
            raise ValueError("--sweep requires --grid")
        grid = [float(v) for v in args.grid.split(",")]
        syn = SyntheticConfig(
            ambient_dim=args.p, subspace_rank=args.rank,
            total=args.total, train_count=args.train,
        )
        eng = EngineConfig(rank=args.rank)
        rows = tradeoff_sweep(
            args.sweep, grid, args.delta, seeds=range(args.seeds),
            syn_config=syn, engine_config=eng, batch_size=args.batch_size,
        )
        if args.out:
            write_sweep_csv(args.out, rows)
        else:
            json.dump(rows, sys.stdout, indent=2)
            print()
        return 0
    if not args.scores or not args.labels:
        raise ValueError("eval needs --scores and --labels (or --sweep)")
    scores = np.loadtxt(args.scores, ndmin=1)
    labels = np.loadtxt(args.labels, ndmin=1).astype(int)
    if args.best or args.tau is None:
        tau, m = best_threshold(scores, labels)
    else:
        m = detection_rates(scores, labels, args.tau)
    result = m.to_dict()
    result["auc"] = auc_score(scores, labels)
    json.dump(result, sys.stdout)
    print()
    return 0


def _cmd_anscombe(args):
    out = _open_out(args.out)
    try:
        with open(args.input) as fh:
            for lineno, line in enumerate(fh, start=1):
                if args.header and lineno == 1:
                    continue
                line = line.strip()
                if not line:
                    continue
                try:
                    counts = np.array([float(tok) for tok in line.split(",")])
                    values = anscombe(counts)
                except ValueError as exc:
                    raise ValueError(f"{args.input}: line {lineno}: {exc}") from exc
                out.write(",".join(repr(float(v)) for v in values) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_serve(args):
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


COMMANDS = {
    "thin": _cmd_thin,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "anscombe": _cmd_anscombe,
    "serve": _cmd_serve,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
