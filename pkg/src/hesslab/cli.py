"""Command-line entry point.

Subcommands: gen-data, hessian, limits, constants, decay, concentration,
spectrum, decouple-check, train, mc-oracle. Every run writes its outputs plus
a JSON manifest with checksums. Exit status: 0 success, 1 validation error,
2 numerical nonconvergence. Thread budget comes from HLAB_THREADS.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, hessian as hk, io, limits as lim, spectral
from .models import LOSS_KINDS
from .randkit import (
    InvalidConfigError,
    InvalidDimensionError,
    RngStream,
    gen_cluster_dataset,
    gen_gaussian_dataset,
    lecun_init,
)

_VALIDATION_ERRORS = (
    ValueError,
    InvalidDimensionError,
    InvalidConfigError,
    io.MalformedHeaderError,
    io.DimensionMismatchError,
    io.ParseFailureError,
    hk.IndexOutOfRangeError,
    hk.MemoryBudgetError,
    hk.BudgetExceededError,
    FileNotFoundError,
)

_NUMERICAL_ERRORS = (
    spectral.NonconvergenceError,
    spectral.IllConditionedFitError,
    lim.QuadratureError,
    lim.ConstantsDisagreementError,
    experiments.DivergenceError,
    experiments.DegenerateFitError,
    hk.KinkError,
)


def _parse_grid(text: str):
    if ":" in text:
        lo, hi, step = text.split(":")
        if not step.startswith("x"):
            raise ValueError("geometric grid must look like 8:512:x2")
        lo, hi, fac = int(lo), int(hi), int(step[1:])
        if lo < 1 or hi < lo or fac < 2:
            raise ValueError(f"bad grid {text!r}")
        out = []
        c = lo
        while c <= hi:
            out.append(c)
            c *= fac
        return out
    return [int(tok) for tok in text.split(",") if tok]


def _manifest(args, command: str, params: dict) -> io.RunManifest:
    return io.RunManifest(command=command, parameters=params, root_seed=args.seed,
                          tool_version=__version__)


def _out_prefix(args) -> Path:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args) -> int:
    rng = RngStream(args.seed, "gen-data")
    if args.kind == "gaussian":
        ds = gen_gaussian_dataset(args.d, args.N, args.C, rng, label_policy=args.label_policy)
        params = {"kind": args.kind, "d": args.d, "N": args.N, "C": args.C,
                  "label_policy": args.label_policy}
    else:
        ds = gen_cluster_dataset(args.n_total, args.C, args.clusters, args.d,
                                 noise_scale=args.noise, rng=rng)
        params = {"kind": args.kind, "n_total": args.n_total, "C": args.C,
                  "clusters": args.clusters, "d": args.d, "noise": args.noise}
    out = _out_prefix(args)
    xp = f"{out}_X.hmat"
    lp = f"{out}_labels.csv"
    io.write_matrix_dump(xp, ds.X)
    io.write_labels_csv(lp, ds.labels)
    man = _manifest(args, "gen-data", params)
    man.add_output(xp, "hmat")
    man.add_output(lp, "labels-csv")
    man.write(f"{out}_manifest.json")
    return 0


def _make_model(args, rng: RngStream):
    data = gen_gaussian_dataset(args.d, args.N, args.C, rng.child("data"))
    params = lecun_init(args.model, args.d, args.m if args.model == "mlp" else None,
                        args.C, rng.child("init"))
    return params, data


def _cmd_hessian(args) -> int:
    rng = RngStream(args.seed, "hessian")
    params, data = _make_model(args, rng)
    out = _out_prefix(args)
    man = _manifest(args, "hessian", {
        "model": args.model, "loss": args.loss, "d": args.d, "m": args.m,
        "C": args.C, "N": args.N, "full": args.full, "block": args.block,
    })
    if args.full:
        full = hk.assemble_full_hessian(params, data, args.loss, max_side=args.max_side)
        hp = f"{out}_hessian.hmat"
        io.write_matrix_dump(hp, full.H)
        man.add_output(hp, "hmat")
        lj = f"{out}_layout.json"
        io.write_json(lj, full.layout.to_json_dict())
        man.add_output(lj, "layout-json")
        if args.heatmap:
            ab = np.abs(full.H)
            hm = f"{out}_heatmap.hmat"
            io.write_matrix_dump(hm, ab)
            man.add_output(hm, "hmat-abs")
            pg = f"{out}_heatmap.pgm"
            side = io.write_pgm(pg, ab)
            man.add_output(pg, "pgm")
            sj = f"{out}_heatmap.json"
            io.write_json(sj, {**side, "layout": full.layout.to_json_dict()})
            man.add_output(sj, "heatmap-sidecar")
    elif args.block:
        pair, i, j = args.block[0], int(args.block[1]), int(args.block[2])
        if args.model == "linear":
            blk = hk.hessian_block_linear(params, data, args.loss, i, j)
        elif pair == "ww":
            blk = hk.hessian_block_mlp_ww(params, data, args.loss, i, j)
        elif pair == "vv":
            blk = hk.hessian_block_mlp_vv(params, data, args.loss, i, j)
        elif pair == "wv":
            blk = hk.hessian_block_mlp_wv(params, data, args.loss, i, j)
        else:
            raise ValueError(f"unknown pair kind {pair!r}")
        bp = f"{out}_block_{pair}_{i}_{j}.hmat"
        io.write_matrix_dump(bp, blk.M)
        man.add_output(bp, "hmat")
    else:
        raise ValueError("pass --full or --block PAIR I J")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_limits(args) -> int:
    rng = RngStream(args.seed, "limits")
    name, which = args.target.split("_")
    kwargs = dict(limit=args.limit)
    if name == "g":
        est = lim.eval_g(args.gamma, args.C, which, args.samples, rng, **kwargs)
    elif name == "u":
        est = lim.eval_u(args.gamma, args.C, args.m, which, **kwargs)
    elif name == "h":
        est = lim.eval_h(args.gamma, args.C, args.m, which, args.samples, rng, **kwargs)
    elif name == "q":
        est = lim.eval_q(args.gamma, args.C, args.m, which, args.samples, rng,
                         pair_average=args.pair_average, **kwargs)
    else:
        raise ValueError(f"unknown target {args.target!r}")
    out = _out_prefix(args)
    jp = f"{out}_limit.json"
    io.write_json(jp, est.to_json_dict())
    man = _manifest(args, "limits", {"target": args.target, "gamma": args.gamma,
                                     "C": args.C, "m": args.m, "samples": args.samples,
                                     "limit": args.limit})
    man.add_output(jp, "limit-json")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_constants(args) -> int:
    rng = RngStream(args.seed, "constants")
    consts = lim.eval_constants(args.m, mc_gate=not args.no_gate,
                                mc_samples=args.mc_samples, rng=rng)
    out = _out_prefix(args)
    jp = f"{out}_constants.json"
    io.write_json(jp, {k: v.to_json_dict() for k, v in consts.items()})
    man = _manifest(args, "constants", {"m": args.m, "mc_samples": args.mc_samples,
                                        "gate": not args.no_gate})
    man.add_output(jp, "constants-json")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_decay(args) -> int:
    rng = RngStream(args.seed, "decay")
    grid = _parse_grid(args.grid)
    fit = experiments.decay_sweep(args.case, args.d, args.N, args.m, grid, args.trials, rng)
    out = _out_prefix(args)
    cp = f"{out}_decay.csv"
    io.write_decay_csv(cp, fit)
    jp = f"{out}_fit.json"
    io.write_json(jp, fit.to_json_dict())
    man = _manifest(args, "decay", {"case": args.case, "d": args.d, "N": args.N,
                                    "m": args.m, "grid": grid, "trials": args.trials})
    man.add_output(cp, "decay-csv")
    man.add_output(jp, "fit-json")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_concentration(args) -> int:
    rng = RngStream(args.seed, "concentration")
    C_list = _parse_grid(args.C)
    rows, summaries = experiments.concentration_sweep(
        args.case, args.d, args.N, C_list, args.m, args.trials, rng,
        theory_samples=args.theory_samples,
    )
    out = _out_prefix(args)
    cp = f"{out}_concentration.csv"
    io.write_concentration_csv(cp, rows)
    theory = {
        "case": args.case,
        "H11": {
            "curve": [
                {"C": s.C, "value": s.theory_H11.value, "std_error": s.theory_H11.std_error}
                for s in summaries
            ],
            "limit": summaries[0].limit_H11.value,
        },
        "H12": {
            "curve": [
                {"C": s.C, "value": s.theory_H12.value, "std_error": s.theory_H12.std_error}
                for s in summaries
            ],
            "limit": summaries[0].limit_H12.value,
        },
    }
    jp = f"{out}_theory.json"
    io.write_json(jp, theory)
    man = _manifest(args, "concentration", {"case": args.case, "d": args.d, "N": args.N,
                                            "m": args.m, "C": C_list, "trials": args.trials,
                                            "theory_samples": args.theory_samples})
    man.add_output(cp, "concentration-csv")
    man.add_output(jp, "theory-json")
    man.write(f"{out}_manifest.json")
    return 0


def _parse_atoms(text: str):
    atoms = []
    for tok in text.split(","):
        loc, w = tok.split(":")
        atoms.append((float(loc), float(w)))
    return atoms


def _cmd_spectrum(args) -> int:
    out = _out_prefix(args)
    man = _manifest(args, "spectrum", {"matrix": args.matrix, "gmp_atoms": args.gmp_atoms,
                                       "gamma": args.gamma, "z": args.z,
                                       "max_iter": args.max_iter})
    if args.matrix:
        M = io.read_matrix_dump(args.matrix)
        spec = spectral.empirical_spectrum(M, source=str(args.matrix))
        sp = f"{out}_spectrum.csv"
        io.write_spectrum_csv(sp, spec.eigenvalues)
        man.add_output(sp, "spectrum-csv")
    elif args.gmp_atoms:
        nu = spectral.MeasureRep.from_atoms(_parse_atoms(args.gmp_atoms))
        records = []
        for ztext in args.z:
            z = complex(ztext)
            rec = spectral.solve_generalized_mp(args.gamma, nu, z, max_iter=args.max_iter,
                                                full_output=True)
            records.append(rec.to_json_dict())
        jp = f"{out}_stieltjes.json"
        io.write_json(jp, records)
        man.add_output(jp, "stieltjes-json")
    else:
        raise ValueError("pass --matrix FILE or --gmp-atoms ATOMS with --z")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_decouple(args) -> int:
    rng = RngStream(args.seed, "decouple")
    if args.which in ("ii", "ij"):
        rep = spectral.bernoulli_decoupling_check(args.d, args.N, args.which, rng,
                                                  reps=args.reps)
    elif args.which == "lindeberg":
        rep = spectral.lindeberg_decoupling_check(args.d, args.N, args.C, rng,
                                                  reps=args.reps)
    else:
        raise ValueError("which must be ii, ij, or lindeberg")
    out = _out_prefix(args)
    jp = f"{out}_decouple.json"
    io.write_json(jp, rep.to_json_dict())
    man = _manifest(args, "decouple-check", {"which": args.which, "d": args.d,
                                             "N": args.N, "C": args.C, "reps": args.reps})
    man.add_output(jp, "decouple-json")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_train(args) -> int:
    rng = RngStream(args.seed, "train")
    data = gen_gaussian_dataset(args.d, args.N, args.C, rng.child("data"))
    params = lecun_init("mlp", args.d, args.m, args.C, rng.child("init"))
    cfg = experiments.TrainConfig(steps=args.steps, loss_kind=args.loss, lr=args.lr,
                                  seed=args.seed)
    fracs = [float(tok) for tok in args.snapshots.split(",") if tok]
    snaps = sorted(set(int(round(f * args.steps)) for f in fracs))
    trace = experiments.train_and_trace(params, data, cfg, snaps, max_side=args.max_side)
    out = _out_prefix(args)
    tp = f"{out}_trace.csv"
    io.write_trace_csv(tp, trace)
    man = _manifest(args, "train", {"d": args.d, "m": args.m, "C": args.C, "N": args.N,
                                    "loss": args.loss, "steps": args.steps, "lr": args.lr,
                                    "snapshots": fracs})
    man.add_output(tp, "trace-csv")
    man.write(f"{out}_manifest.json")
    return 0


def _cmd_mc_oracle(args) -> int:
    rng = RngStream(args.seed, "mc-oracle")
    if args.target == "constants":
        ests = lim.mc_oracle_constants(args.m, args.samples, rng)
        payload = {k: v.to_json_dict() for k, v in ests.items()}
    elif args.target == "g_ii_c2":
        payload = lim.mc_oracle_g_c2_sigmoid(args.samples, rng, gamma=args.gamma).to_json_dict()
    else:
        raise ValueError(f"unknown oracle target {args.target!r}")
    out = _out_prefix(args)
    jp = f"{out}_oracle.json"
    io.write_json(jp, payload)
    man = _manifest(args, "mc-oracle", {"target": args.target, "m": args.m,
                                        "samples": args.samples, "gamma": args.gamma})
    man.add_output(jp, "oracle-json")
    man.write(f"{out}_manifest.json")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hesslab", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", required=True, help="output path prefix")

    sp = sub.add_parser("gen-data")
    sp.add_argument("--kind", choices=("gaussian", "cluster"), default="gaussian")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--N", type=int, default=0)
    sp.add_argument("--C", type=int, required=True)
    sp.add_argument("--label-policy", choices=("uniform", "cyclic"), default="uniform")
    sp.add_argument("--n-total", type=int, default=0)
    sp.add_argument("--clusters", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.05)
    common(sp)
    sp.set_defaults(fn=_cmd_gen_data)

    sp = sub.add_parser("hessian")
    sp.add_argument("--model", choices=("linear", "mlp"), required=True)
    sp.add_argument("--loss", choices=LOSS_KINDS, required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--C", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--full", action="store_true")
    sp.add_argument("--block", nargs=3, metavar=("PAIR", "I", "J"))
    sp.add_argument("--heatmap", action="store_true")
    sp.add_argument("--max-side", type=int, default=5000)
    common(sp)
    sp.set_defaults(fn=_cmd_hessian)

    sp = sub.add_parser("limits")
    sp.add_argument("--target", required=True,
                    choices=("g_ii", "g_ij", "u_ii", "u_ij", "h_ii", "h_ij", "q_ii", "q_ij"))
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--C", type=int, default=2)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--samples", type=int, default=10**6)
    sp.add_argument("--limit", action="store_true", help="large-C closed form")
    sp.add_argument("--pair-average", action="store_true")
    common(sp)
    sp.set_defaults(fn=_cmd_limits)

    sp = sub.add_parser("constants")
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--mc-samples", type=int, default=10**6)
    sp.add_argument("--no-gate", action="store_true")
    common(sp)
    sp.set_defaults(fn=_cmd_constants)

    sp = sub.add_parser("decay")
    sp.add_argument("--case", choices=experiments.CASES, required=True)
    sp.add_argument("--d", type=int, default=300)
    sp.add_argument("--N", type=int, default=300)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--grid", default="8:512:x2")
    sp.add_argument("--trials", type=int, default=20)
    common(sp)
    sp.set_defaults(fn=_cmd_decay)

    sp = sub.add_parser("concentration")
    sp.add_argument("--case", choices=experiments.CASES, required=True)
    sp.add_argument("--d", type=int, default=300)
    sp.add_argument("--N", type=int, default=300)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--C", required=True, help="comma list or geometric grid")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--theory-samples", type=int, default=10**5)
    common(sp)
    sp.set_defaults(fn=_cmd_concentration)

    sp = sub.add_parser("spectrum")
    sp.add_argument("--matrix", help="HMAT file to eigendecompose")
    sp.add_argument("--gmp-atoms", help="atom measure like 0:0.5,1:0.5")
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--z", action="append", default=[], help="complex query, e.g. 2+1j")
    sp.add_argument("--max-iter", type=int, default=10**5)
    common(sp)
    sp.set_defaults(fn=_cmd_spectrum)

    sp = sub.add_parser("decouple-check")
    sp.add_argument("--which", choices=("ii", "ij", "lindeberg"), required=True)
    sp.add_argument("--d", type=int, default=400)
    sp.add_argument("--N", type=int, default=400)
    sp.add_argument("--C", type=int, default=16)
    sp.add_argument("--reps", type=int, default=1)
    common(sp)
    sp.set_defaults(fn=_cmd_decouple)

    sp = sub.add_parser("train")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--C", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--loss", choices=LOSS_KINDS, default="ce")
    sp.add_argument("--steps", type=int, default=20000)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--snapshots", default="0,0.1,0.25,0.5,0.75,1.0")
    sp.add_argument("--max-side", type=int, default=5000)
    common(sp)
    sp.set_defaults(fn=_cmd_train)

    sp = sub.add_parser("mc-oracle")
    sp.add_argument("--target", choices=("constants", "g_ii_c2"), required=True)
    sp.add_argument("--m", type=int, default=8)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--samples", type=int, default=10**6)
    common(sp)
    sp.set_defaults(fn=_cmd_mc_oracle)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version, 2 for usage errors
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
