"""
Command line front door.

    python -m src.cli run --config config/scenarios/small.json --out runs/small
    python -m src.cli verify runs/small/chains/local-0.jsonl --validators runs/small/chains/global.jsonl
    python -m src.cli bench --out config/calibration/measured.json --workers 4
    python -m src.cli tables --metrics runs/small/metrics.json --out runs/small/tables
"""
import argparse
import json
import logging
import random
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core.config import CalibrationTable, default_out_dir, load_config, log_level
from .core.errors import ConfigError, DecodeError, TrustSASError
from .core.metrics import MetricsReport, emit_tables
from .core.scenario_engine import run_scenario
from .ledger.chain import ChainContext, audit_chain, load_blocks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


# micro-benchmarks; top-level so the process pool can pickle them

def bench_epid(trials: int, seed: int) -> dict:
    from .crypto.epid import EpidIssuer, RevocationList, epid_join, epid_setup, epid_sign, epid_verify

    rng = random.Random(seed)
    issuer = EpidIssuer(epid_setup(128, rng), rng)
    secret = epid_join(issuer.public, issuer, rng)
    revocations = RevocationList()
    messages = [f"bench-epid:{i}".encode() for i in range(trials)]
    start = time.perf_counter()
    signatures = [epid_sign(secret, issuer.public, m, revocations, rng) for m in messages]
    signed = time.perf_counter()
    for m, sig in zip(messages, signatures):
        epid_verify(issuer.public, m, sig, revocations)
    verified = time.perf_counter()
    return {"epid_sign_s": (signed - start) / trials, "epid_verify_s": (verified - signed) / trials}


def bench_tbls(n: int, t: int, seed: int) -> dict:
    from .crypto.tbls import dkg, group_sign_verify, sign_reconstruct, sign_share_gen, sign_share_verify

    reference = CalibrationTable()
    rng = random.Random(seed)
    start = time.perf_counter()
    materials = dkg(list(range(1, n + 1)), t, rng)
    dkg_s = time.perf_counter() - start

    message = b"bench-tbls"
    start = time.perf_counter()
    shares = [sign_share_gen(m.x_j, message, j) for j, m in sorted(materials.items())[: t + 1]]
    share_gen_s = (time.perf_counter() - start) / len(shares)
    z = next(iter(materials.values())).z
    start = time.perf_counter()
    for share in shares:
        sign_share_verify(share, z[share.index], message)
    share_verify_s = (time.perf_counter() - start) / len(shares)
    start = time.perf_counter()
    sigma = sign_reconstruct(shares, t)
    reconstruct_s = time.perf_counter() - start
    start = time.perf_counter()
    group_sign_verify(message, sigma, next(iter(materials.values())).y)
    group_verify_s = time.perf_counter() - start
    return {
        "dkg_s": dkg_s * reference.dkg_reference_n / n,
        "share_gen_s": share_gen_s,
        "share_verify_s": share_verify_s,
        "reconstruct_s": reconstruct_s * reference.reconstruct_reference_t / max(t, 1),
        "group_verify_s": group_verify_s,
    }


def bench_bls(trials: int, seed: int) -> dict:
    from .crypto.bls import RECORD_DST, BlsKeyPair, bls_verify

    key = BlsKeyPair.generate(random.Random(seed))
    messages = [f"bench-bls:{i}".encode() for i in range(trials)]
    start = time.perf_counter()
    signatures = [key.sign(m, RECORD_DST) for m in messages]
    signed = time.perf_counter()
    for m, sig in zip(messages, signatures):
        bls_verify(key.public, m, sig, RECORD_DST)
    verified = time.perf_counter()
    verify_s = (verified - signed) / trials
    return {"bls_sign_s": (signed - start) / trials, "bls_verify_s": verify_s, "record_verify_s": verify_s}


def bench_pir(q: int, r: int, s: int, servers: int, t: int, seed: int) -> dict:
    from .pir.batch_pir import build_query_batch, server_process

    reference = CalibrationTable()
    rng = np.random.default_rng(seed)
    database = rng.integers(0, 256, size=(r, s), dtype=np.uint8)
    indices = rng.choice(r, size=q, replace=False).tolist()
    start = time.perf_counter()
    batch = build_query_batch(indices, r, servers, t, rng)
    query_gen_s = time.perf_counter() - start
    start = time.perf_counter()
    server_process(batch.payloads[1], database)
    process_s = time.perf_counter() - start
    ref_gen = reference.pir_reference_q * reference.pir_reference_r * reference.pir_reference_servers
    ref_process = reference.pir_reference_q * reference.pir_reference_r * reference.pir_reference_s
    return {
        "pir_query_gen_s": query_gen_s * ref_gen / (q * r * servers),
        "pir_process_s": process_s * ref_process / (q * r * s),
    }


def run_benchmarks(workers: int = 1, seed: int = 0, trials: int = 8, n: int = 32, t: int = 15,
                   q: int = 8, r: int = 4096, s: int = 128, servers: int = 7, pir_t: int = 2) -> CalibrationTable:
    """Measure every primitive and fold the results into a calibration table"""
    measured = {}
    with ProcessPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [
            pool.submit(bench_epid, trials, seed),
            pool.submit(bench_tbls, n, t, seed),
            pool.submit(bench_bls, trials, seed),
            pool.submit(bench_pir, q, r, s, servers, pir_t, seed),
        ]
        for future in futures:
            measured.update(future.result())
    logger.info(f"measured {len(measured)} primitive costs")
    return CalibrationTable(**{**CalibrationTable().model_dump(), **measured})


# subcommands

def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed=args.seed, debug_invariants=args.debug_invariants or None)
    out_dir = Path(args.out) if args.out else default_out_dir() / f"{config.name}-{config.seed}"
    report = run_scenario(config, out_dir)
    print(f"{config.name}: sim_time={report.sim_time:.3f}s trace={report.trace_hash[:16]} "
          f"operations={len(report.operations)} violations={report.invariant_violations} -> {out_dir}")
    return EXIT_OK if report.invariant_violations == 0 else EXIT_FAILED


def cmd_verify(args: argparse.Namespace) -> int:
    context = ChainContext()
    if args.validators:
        anchor, _ = audit_chain(load_blocks(Path(args.validators)), context, Path(args.validators).stem)
        if not anchor.ok:
            print(json.dumps(anchor.to_dict()))
            return EXIT_FAILED
    report, _ = audit_chain(load_blocks(Path(args.dump)), context, Path(args.dump).stem)
    print(json.dumps(report.to_dict()))
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_bench(args: argparse.Namespace) -> int:
    table = run_benchmarks(workers=args.workers, seed=args.seed)
    out = Path(args.out) if args.out else default_out_dir() / "calibration.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table.model_dump(), indent=2, sort_keys=True), encoding="utf-8")
    print(f"calibration table written to {out}")
    return EXIT_OK


def cmd_tables(args: argparse.Namespace) -> int:
    report = MetricsReport.load(Path(args.metrics))
    for path in emit_tables(report, Path(args.out)):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustsas", description="TrustSAS spectrum access simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("--config", required=True, help="scenario JSON")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--debug-invariants", action="store_true", help="audit every chain after each epoch")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="re-verify a chain dump from genesis")
    verify.add_argument("dump", help="chain dump (.jsonl)")
    verify.add_argument("--validators", default=None,
                        help="global chain dump replayed first for group keys and revocations")
    verify.set_defaults(func=cmd_verify)

    bench = sub.add_parser("bench", help="micro-benchmark primitives into a calibration table")
    bench.add_argument("--out", default=None)
    bench.add_argument("--workers", type=int, default=4)
    bench.add_argument("--seed", type=int, default=0)
    bench.set_defaults(func=cmd_bench)

    tables = sub.add_parser("tables", help="emit tables from a metrics file")
    tables.add_argument("--metrics", required=True)
    tables.add_argument("--out", required=True)
    tables.set_defaults(func=cmd_tables)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    debug = getattr(args, "debug_invariants", False)
    logging.basicConfig(level=logging.DEBUG if debug else log_level(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_USAGE
    except (DecodeError, OSError) as e:
        logger.error(f"cannot read input: {e}")
        return EXIT_FAILED
    except TrustSASError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
