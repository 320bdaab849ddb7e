"""Command line front end.

Exit codes: 0 when the command succeeds (for `verify`, when the transcript
passes), 2 when a verification verdict is fail, 3 for operational problems
(bad arguments, unreadable files, envelopes that will not open).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import (
    cost_curve,
    epsilon_repr,
    k_sweep,
    ks_steps,
    lr_sweep,
    storage_curve,
    write_csv,
)
from .config import (
    RunConfig,
    build_arch,
    build_dataset,
    build_hyper,
    build_noise,
    build_verifier_config,
    load_config,
)
from .proof import StructuralError, create_proof, read_proof, write_proof
from .sealing import (
    SealError,
    generate_identity,
    load_identity,
    load_public,
    read_sealed,
    save_identity,
    save_public,
    seal,
    sign_detached,
    write_sealed,
)
from .spoof import (
    ATTACKS,
    concat_spoof,
    directed_regularizer_spoof,
    inverse_gradient_spoof,
    retrain_spoof,
)
from .training import CallCounter
from .verify import ProofLedger, verify_sealed, verify_transcript


class CliError(Exception):
    """Usage or environment problem; maps to exit code 3."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _outdir(args):
    out = args.out or os.environ.get("TRAINPROOF_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_run_config(args):
    if args.config is None:
        return RunConfig()
    try:
        return load_config(args.config)
    except (OSError, ValueError, TypeError) as e:
        raise CliError(f"config {args.config}: {e}") from None


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _write_report(path, doc):
    with open(path, "w") as fh:
        json.dump(_json_ready(doc), fh, indent=2)
        fh.write("\n")


def _build_run(cfg):
    dataset = build_dataset(cfg)
    arch = build_arch(cfg, dataset)
    hyper = build_hyper(cfg)
    noise = build_noise(cfg, arch)
    return dataset, arch, hyper, noise


def _cmd_keys(args):
    out = _outdir(args)
    ident = generate_identity()
    id_path = os.path.join(out, f"{args.name}.id.json")
    pub_path = os.path.join(out, f"{args.name}.pub.json")
    save_identity(ident, id_path)
    save_public(ident, pub_path)
    print(f"identity {id_path}")
    print(f"public   {pub_path}")
    return 0


def _cmd_prove(args):
    cfg = _load_run_config(args)
    out = _outdir(args)
    dataset, arch, hyper, noise = _build_run(cfg)
    counter = CallCounter()
    proof, final = create_proof(
        dataset,
        arch,
        hyper,
        epochs=cfg.train.epochs,
        checkpoint_interval=cfg.train.checkpoint_interval,
        noise=noise,
        checkpoint_dtype=cfg.train.checkpoint_dtype,
        noise_seed=cfg.train.noise_seed,
        counter=counter,
    )
    tag = args.tag
    pol_path = os.path.join(out, f"{tag}.pol")
    write_proof(proof, pol_path)
    weights_path = os.path.join(out, f"{tag}.weights.npy")
    np.save(weights_path, final.values)
    data = proof.serialize()
    if args.identity:
        ident = load_identity(args.identity)
        sig_path = pol_path + ".sig"
        with open(sig_path, "wb") as fh:
            fh.write(sign_detached(data, ident))
        print(f"signature {sig_path}")
        if args.seal_to:
            _, enc_pub = load_public(args.seal_to)
            env_path = os.path.join(out, f"{tag}.envelope")
            write_sealed(seal(data, enc_pub, ident), env_path)
            print(f"envelope {env_path}")
    elif args.seal_to:
        raise CliError("--seal-to needs --identity to sign the envelope")
    report = {
        "proof_hash": proof.content_hash(),
        "bytes": len(data),
        "steps": proof.meta.total_steps,
        "checkpoints": len(proof.checkpoint_steps),
        "grad_calls": counter.grad_evals,
        "noise_kind": noise.kind,
        "noise_sigma": noise.sigma,
        "files": {"proof": pol_path, "weights": weights_path},
    }
    report_path = os.path.join(out, f"{tag}.prove.json")
    _write_report(report_path, report)
    print(f"transcript {proof.content_hash()}")
    print(f"wrote {pol_path} ({len(data)} bytes, {report['checkpoints']} checkpoints)")
    print(f"wrote {weights_path}")
    print(f"report {report_path}")
    return 0


def _print_verdict(result):
    if result.ok:
        print("VERDICT pass")
    else:
        print(f"VERDICT fail {result.fail_reason}")
        print(f"  {result.detail}")
    if result.delta is not None:
        print(f"delta {result.delta:.6g}")
    print(f"replayed {result.recomputed_steps} steps")


def _result_report(result):
    return {
        "ok": result.ok,
        "fail_reason": result.fail_reason,
        "detail": result.detail,
        "delta": result.delta,
        "noise_allowance": result.noise_allowance,
        "recomputed_steps": result.recomputed_steps,
        "segments": [
            {
                "start": s.start,
                "end": s.end,
                "epoch": s.epoch,
                "magnitude": s.magnitude,
                "selected_by": s.selected_by,
                "digest_ok": s.digest_ok,
                "replay_distance": s.replay_distance,
            }
            for s in result.segments_checked
        ],
    }


def _cmd_verify(args):
    cfg = _load_run_config(args)
    dataset = build_dataset(cfg)
    vcfg = build_verifier_config(cfg)
    claimed = np.load(args.claimed) if args.claimed else None
    prior = read_proof(args.prior) if args.prior else None
    ledger = ProofLedger(args.ledger) if args.ledger else None
    proof = None
    if args.envelope:
        if not args.identity or not args.prover_pub:
            raise CliError("--envelope needs --identity and --prover-pub")
        sealed = read_sealed(args.envelope)
        sign_pub, _ = load_public(args.prover_pub)
        result = verify_sealed(
            sealed, load_identity(args.identity), sign_pub, dataset, vcfg,
            prior=prior, ledger=ledger, claimed_weights=claimed,
        )
    else:
        if not args.proof:
            raise CliError("give either --proof or --envelope")
        proof = read_proof(args.proof)
        result = verify_transcript(
            proof, dataset, vcfg, prior=prior, ledger=ledger, claimed_weights=claimed
        )
    _print_verdict(result)
    if args.report:
        _write_report(args.report, _result_report(result))
        print(f"report {args.report}")
    if args.record:
        if proof is None:
            raise CliError("--record needs --proof (sealed envelopes stay unrecorded)")
        if ledger is None:
            raise CliError("--record needs --ledger")
        ledger.record_result(proof, result)
        ledger.save()
    return 0 if result.ok else 2


def _victim_weights(args, cfg, dataset, arch, hyper, noise):
    if args.stolen:
        return np.load(args.stolen)
    from dataclasses import replace

    from .training import run_sgd

    victim = replace(hyper, seed=args.victim_seed)
    return run_sgd(dataset, arch, victim, cfg.train.epochs, noise).weights.values


def _cmd_spoof(args):
    cfg = _load_run_config(args)
    out = _outdir(args)
    dataset, arch, hyper, noise = _build_run(cfg)
    stolen = _victim_weights(args, cfg, dataset, arch, hyper, noise)
    epochs = cfg.train.epochs
    k = cfg.train.checkpoint_interval
    claimed = None
    if args.attack == "concat":
        report = concat_spoof(
            dataset, arch, hyper, stolen,
            epochs=epochs, fresh_epochs=args.fresh_epochs or max(1, epochs // 4),
            checkpoint_interval=k, noise=noise,
        )
    elif args.attack == "inverse_gradient":
        from dataclasses import replace

        spoof_hyper = replace(hyper, eta=args.spoof_eta) if args.spoof_eta else hyper
        report = inverse_gradient_spoof(
            dataset, arch, spoof_hyper, stolen,
            epochs=args.spoof_epochs or 1, checkpoint_interval=k,
        )
    elif args.attack == "retrain":
        claimed = stolen
        report = retrain_spoof(
            dataset, arch, hyper, stolen,
            epochs=epochs, checkpoint_interval=k, noise=noise,
            retrain_noise_seed=args.retrain_noise_seed,
        )
    else:
        report = directed_regularizer_spoof(
            dataset, arch, hyper, stolen,
            epochs=epochs, checkpoint_interval=k,
            lam=args.lam, declare=args.declare, noise=noise,
        )
    vcfg = build_verifier_config(cfg)
    result = verify_transcript(report.proof, dataset, vcfg, claimed_weights=claimed)
    pol_path = os.path.join(out, f"{args.attack}.pol")
    write_proof(report.proof, pol_path)
    print(f"attack {args.attack}")
    print(f"gradient calls {report.grad_calls} (honest run: {report.honest_calls})")
    if report.discontinuity is not None:
        print(f"splice at step {report.splice_step}, jump {report.discontinuity:.4g}")
    if report.max_residual is not None:
        print(f"worst inversion residual {report.max_residual:.3g}")
    if report.final_gap is not None:
        print(f"gap to stolen weights {report.final_gap:.4g}")
    _print_verdict(result)
    doc = {
        "attack": args.attack,
        "grad_calls": report.grad_calls,
        "honest_calls": report.honest_calls,
        "splice_step": report.splice_step,
        "discontinuity": report.discontinuity,
        "max_residual": report.max_residual,
        "final_gap": report.final_gap,
        "verdict": _result_report(result),
        "files": {"proof": pol_path},
    }
    report_path = os.path.join(out, f"{args.attack}.spoof.json")
    _write_report(report_path, doc)
    print(f"report {report_path}")
    return 0


def _values(args, default):
    if args.values is None:
        return default
    try:
        parsed = [float(x) for x in args.values.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"cannot parse --values {args.values!r}") from None
    if not parsed:
        raise CliError("--values is empty")
    return parsed


def _cmd_bench(args):
    cfg = _load_run_config(args)
    dataset, arch, hyper, noise = _build_run(cfg)
    import math

    S = math.ceil(dataset.n / hyper.batch_size)
    E = cfg.train.epochs
    T = E * S
    P = arch.n_params
    k = cfg.train.checkpoint_interval
    suite = args.suite
    if suite == "k-sweep":
        ks = [int(v) for v in _values(args, [1, 2, 4, 5, 10, 20]) if v <= S]
        rows = k_sweep(P, E, S, ks, query_budget=1, dataset_size=dataset.n,
                       dtype=cfg.train.checkpoint_dtype)
    elif suite == "lr-sweep":
        etas = _values(args, [0.01, 0.03, 0.1, 0.3, 1.0])
        rows = lr_sweep(dataset, arch, hyper, E, noise, etas, length=S)
    elif suite == "ks-steps":
        counts = [int(v) for v in _values(args, [0, 1, 5, 10, 25, 50, 100, 200, min(400, T)])]
        rows = ks_steps(dataset, arch, hyper, E, noise, [c for c in counts if c <= T])
    elif suite == "cost-curve":
        qs = [int(v) for v in _values(args, [1, 2, 3, 4]) if v * k <= S]
        rows = cost_curve(E, S, k, qs, dataset_size=dataset.n)
    elif suite == "storage-curve":
        ks = [int(v) for v in _values(args, [1, 2, 4, 5, 10, 20]) if v <= T]
        rows = storage_curve(P, E, S, ks)
    elif suite == "repro":
        lengths = [int(v) for v in _values(args, [1, S, T]) if v <= T]
        pts = epsilon_repr(dataset, arch, hyper, E, noise, lengths)
        rows = [
            {
                "length": p.length,
                "reproduction_gap": p.reproduction_gap,
                "independent_gap": p.independent_gap,
                "epsilon": p.epsilon,
            }
            for p in pts
        ]
    else:
        raise CliError(f"unknown suite {suite!r}")
    write_csv(args.csv, rows)
    print(f"wrote {args.csv} ({len(rows)} rows)")
    return 0


def _cmd_ledger(args):
    if args.ledger_cmd == "add":
        cfg = _load_run_config(args)
        dataset = build_dataset(cfg)
        vcfg = build_verifier_config(cfg)
        proof = read_proof(args.proof)
        claimed = np.load(args.claimed) if args.claimed else None
        ledger = ProofLedger(args.ledger)
        result = verify_transcript(proof, dataset, vcfg, ledger=ledger, claimed_weights=claimed)
        ledger.record_result(proof, result)
        ledger.save(args.ledger)
        _print_verdict(result)
        print(f"recorded {proof.content_hash()} in {args.ledger}")
        return 0 if result.ok else 2
    ledger = ProofLedger(args.ledger)
    entry = ledger.get(args.hash)
    if entry is None:
        raise CliError(f"no entry for {args.hash}")
    print(json.dumps(_json_ready(entry), indent=2))
    return 0


def build_parser():
    parser = _Parser(prog="trainproof", description="Verifiable training transcripts for small networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keys", help="generate a signing + receiving identity")
    ksub = p.add_subparsers(dest="keys_cmd", required=True)
    g = ksub.add_parser("gen")
    g.add_argument("--name", required=True)
    g.add_argument("--out")
    g.set_defaults(func=_cmd_keys)

    p = sub.add_parser("prove", help="train and record a transcript")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--tag", default="run")
    p.add_argument("--identity", help="sign the transcript with this identity file")
    p.add_argument("--seal-to", help="encrypt the transcript to this public key file")
    p.set_defaults(func=_cmd_prove)

    p = sub.add_parser("verify", help="check a transcript")
    p.add_argument("--proof")
    p.add_argument("--envelope")
    p.add_argument("--identity", help="recipient identity for --envelope")
    p.add_argument("--prover-pub", help="prover public key file for --envelope")
    p.add_argument("--config")
    p.add_argument("--claimed", help=".npy weights the prover published")
    p.add_argument("--prior", help="prior transcript a warm start continues")
    p.add_argument("--ledger")
    p.add_argument("--record", action="store_true", help="write the verdict into --ledger")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("spoof", help="run an attack and verify its transcript")
    p.add_argument("--attack", choices=ATTACKS, required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--stolen", help=".npy weights to pass off as trained")
    p.add_argument("--victim-seed", type=int, default=1000)
    p.add_argument("--fresh-epochs", type=int)
    p.add_argument("--spoof-eta", type=float)
    p.add_argument("--spoof-epochs", type=int)
    p.add_argument("--retrain-noise-seed", type=int, default=1)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--declare", choices=("honest", "custom_tag"), default="honest")
    p.set_defaults(func=_cmd_spoof)

    p = sub.add_parser("bench", help="run a measurement suite to CSV")
    p.add_argument("--suite", required=True,
                   choices=("k-sweep", "lr-sweep", "ks-steps", "cost-curve", "storage-curve", "repro"))
    p.add_argument("--csv", required=True)
    p.add_argument("--config")
    p.add_argument("--values", help="comma separated suite inputs")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("ledger", help="verdict ledger maintenance")
    lsub = p.add_subparsers(dest="ledger_cmd", required=True)
    a = lsub.add_parser("add")
    a.add_argument("--ledger", required=True)
    a.add_argument("--proof", required=True)
    a.add_argument("--config")
    a.add_argument("--claimed")
    a.set_defaults(func=_cmd_ledger)
    g = lsub.add_parser("get")
    g.add_argument("--ledger", required=True)
    g.add_argument("--hash", required=True)
    g.set_defaults(func=_cmd_ledger)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (SealError, StructuralError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
