"""Command-line drivers: simulate, analyze, curves, reproduce, selftest.

Exit codes: 0 success, 1 validation/input error, 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backend import active_backend
from .channel import ChannelModel, curve_to_csv, plob_bound, rate_distance_curve
from .datasets import (
    DatasetFormatError,
    bundled_path,
    list_bundled,
    load_dataset,
    reproduce,
)
from .finitekey import optimize_group_set, tally_decoy_inputs
from .protocol import InvalidInputError, ProtocolParams, TallyTable
from .simulate import DriftProcess, TrainLayout, run_protocol, train_log_csv


def _load_params_file(path: str) -> tuple[ProtocolParams, ChannelModel, TrainLayout, DriftProcess]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    params = ProtocolParams.from_dict(doc.get("protocol", {}))
    channel = ChannelModel(**doc.get("channel", {"eta_ch": 0.1, "eta_d": 0.23}))
    layout = TrainLayout(**doc.get("layout", {}))
    drift = DriftProcess(**doc.get("drift", {}))
    return params, channel, layout, drift


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _cmd_simulate(args) -> int:
    params, channel, layout, drift = _load_params_file(args.params)
    tally, records = run_protocol(
        params,
        channel,
        layout,
        drift,
        n_trains=args.trains,
        seed=args.seed,
        workers=args.workers,
        phase_reference=args.phase_reference,
        train_log=args.train_log is not None,
    )
    _write_json(args.out, tally.to_dict())
    if args.train_log:
        Path(args.train_log).write_text(train_log_csv(records), encoding="utf-8")
    print(
        f"simulated {tally.n_rounds} rounds over {args.trains} trains "
        f"({active_backend()} backend) -> {args.out}"
    )
    return 0


def _cmd_analyze(args) -> int:
    with open(args.tally, encoding="utf-8") as fh:
        tally = TallyTable.from_dict(json.load(fh))
    params, channel, _, _ = _load_params_file(args.params)
    inputs = tally_decoy_inputs(tally, params)
    plob = plob_bound(channel.eta_tot) if channel.eta_tot < 1 else None
    report = optimize_group_set(inputs, plob_rate=plob)
    _write_json(args.out, report.to_dict())
    print(
        f"key length {report.key_length:.6g} over groups {list(report.group_set)}, "
        f"rate {report.key_rate:.4g}/round, eps {report.epsilon_total:.3g} -> {args.out}"
    )
    return 0


def _parse_distances(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InvalidInputError("distance range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise InvalidInputError("distance step must be positive")
        return list(np.arange(start, stop + step / 2, step))
    return [float(p) for p in text.split(",")]


def _cmd_curves(args) -> int:
    distances = _parse_distances(args.distances)
    points = rate_distance_curve(
        fiber_loss_db_per_km=args.loss_db_per_km,
        eta_d=args.detector_efficiency,
        p_d=args.dark,
        e_d0=args.misalignment,
        distances_km=distances,
        f_ec=args.f_ec,
        workers=args.workers,
    )
    csv_text = curve_to_csv(points)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"{len(points)} curve points -> {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_reproduce(args) -> int:
    ds = load_dataset(bundled_path(args.dataset))
    result = reproduce(ds, duty_factor=args.duty)
    if args.json:
        payload = {
            "dataset": ds.label,
            "report": result.report.to_dict(),
            "comparison": [
                {
                    "quantity": row.quantity,
                    "computed": row.computed,
                    "published": row.published,
                    "relative_deviation": row.relative_deviation,
                }
                for row in result.rows
            ],
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(result.to_text())
        qber0 = result.observables.qber_by_group.get(0)
        if qber0 is not None:
            print(f"aligned QBER: {qber0 * 100:.2f}%")
    return 0


def _cmd_selftest(args) -> int:
    from .protocol import binary_entropy, sift, slice_of_phase
    from .channel import gain_pm, tgw_bound, bessel_i0
    from .finitekey import chernoff_inverse, g2
    from .simulate import estimate_phase_slice

    failures = []

    def check(name, ok):
        print(f"{'ok' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    check("slice centers map to their index",
          all(slice_of_phase(j * 2 * math.pi / 16, 16) == j for j in range(16)))
    check("sift merges antipodal slices",
          sift(5, 3, 14, 0, 16) == (0, False) and sift(0, 8, 0, 0, 16) == (0, True))
    check("binary entropy peak", abs(binary_entropy(0.5) - 1.0) < 1e-15)
    ch = ChannelModel(eta_ch=0.1, eta_d=0.5, p_d=1e-6)
    mu = 0.2
    poisson_mix = sum(
        math.exp(-mu) * mu**k / math.factorial(k)
        * (1 - (1 - 2 * ch.p_d) * (1 - ch.eta_arm) ** k)
        for k in range(40)
    )
    check("gain equals Poisson mixture", abs(gain_pm(mu, ch) - poisson_mix) < 1e-10)
    check("TGW above PLOB",
          all(tgw_bound(e) >= plob_bound(e) for e in (1e-6, 1e-3, 0.1, 0.9)))
    check("Bessel I0(0) = 1", bessel_i0(0.0) == 1.0)
    check("g2 vanishes only at zero", g2(0.0) == 0.0 and g2(1e-3) > 0)
    bv = chernoff_inverse(1e6, 7.0)
    check("inverse bound brackets", bv.lower < 1e6 < bv.upper and 1e-11 < bv.epsilon < 1e-10)
    j, phi = estimate_phase_slice(1000, 0, 500, 500, 16)
    check("phase estimator at zero deviation", j == 0 and abs(phi) < 1e-12)

    params = ProtocolParams(n_rounds=10_000, r_signal=1.0, r_weak=0.0, r_vacuum=0.0,
                            mu_total=0.2, nu_total=0.1)
    layout = TrainLayout()
    t1, _ = run_protocol(params, ch, layout, DriftProcess(drift_rate=0.0), 20,
                         seed=7, workers=1, phase_reference="oracle")
    t2, _ = run_protocol(params, ch, layout, DriftProcess(drift_rate=0.0), 20,
                         seed=7, workers=4, phase_reference="oracle")
    check("worker-count-invariant tallies", t1.to_dict() == t2.to_dict())

    if failures:
        print(f"{len(failures)} selftest check(s) failed", file=sys.stderr)
        return 1
    print("selftest passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmqkd",
        description="Phase-matching QKD simulator and finite-size analyzer",
    )
    parser.add_argument("--version", action="version", version=f"pmqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo simulate protocol rounds")
    p_sim.add_argument("--params", required=True, help="params JSON file")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--trains", type=int, required=True)
    p_sim.add_argument("--out", required=True, help="output tally JSON")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--phase-reference", choices=("estimated", "oracle"),
                       default="estimated")
    p_sim.add_argument("--train-log", default=None, help="per-train diagnostics CSV")
    p_sim.set_defaults(func=_cmd_simulate)

    p_an = sub.add_parser("analyze", help="finite-size analysis of a tally")
    p_an.add_argument("--tally", required=True)
    p_an.add_argument("--params", required=True)
    p_an.add_argument("--out", required=True, help="output report JSON")
    p_an.set_defaults(func=_cmd_analyze)

    p_cv = sub.add_parser("curves", help="rate-vs-distance tables")
    p_cv.add_argument("--loss-db-per-km", type=float, default=0.2)
    p_cv.add_argument("--detector-efficiency", type=float, default=0.23)
    p_cv.add_argument("--dark", type=float, default=1e-9)
    p_cv.add_argument("--misalignment", type=float, default=0.053)
    p_cv.add_argument("--f-ec", type=float, default=1.1)
    p_cv.add_argument("--distances", default="0:600:10",
                      help="start:stop:step or comma list (km)")
    p_cv.add_argument("--workers", type=int, default=1)
    p_cv.add_argument("--out", default=None, help="output CSV (stdout if omitted)")
    p_cv.set_defaults(func=_cmd_curves)

    p_rep = sub.add_parser("reproduce", help="rerun analysis on a published dataset")
    p_rep.add_argument("--dataset", required=True,
                       help=f"dataset label or path; bundled: {', '.join(list_bundled())}")
    p_rep.add_argument("--duty", type=float, default=None,
                       help="duty factor for bits-per-second conversion")
    p_rep.add_argument("--json", action="store_true")
    p_rep.set_defaults(func=_cmd_reproduce)

    p_st = sub.add_parser("selftest", help="run the built-in invariant checks")
    p_st.set_defaults(func=_cmd_selftest)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map to the validation code
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (InvalidInputError, DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
