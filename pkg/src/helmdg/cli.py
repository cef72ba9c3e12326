"""Command-line front end: ``helmdg solve|study|adapt|gamma <config>`` and ``helmdg check``.

Exit codes: 0 success, 1 a built-in check failed, 2 configuration or input
error, 3 numerical failure.  ``HELMDG_THREADS`` caps BLAS/OpenMP threads.
"""
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "BLIS_NUM_THREADS")


def _apply_thread_cap(environ=os.environ):
    cap = environ.get("HELMDG_THREADS")
    if not cap:
        return None
    try:
        n = int(cap)
    except ValueError:
        return "HELMDG_THREADS must be a positive integer"
    if n < 1:
        return "HELMDG_THREADS must be a positive integer"
    for var in _THREAD_VARS:
        environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(n)
    except ImportError:
        pass
    return None


_thread_error = _apply_thread_cap()

import argparse  # noqa: E402

from .errors import ConfigError, HelmDGError, NumericalError  # noqa: E402

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="helmdg", description="IPDG Helmholtz solver, estimator and studies.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "solve once on the configured mesh"),
                       ("study", "run the study kind named in the configuration"),
                       ("adapt", "run the adaptive loop"),
                       ("gamma", "run the approximation-factor study")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="configuration file")
        s.add_argument("-o", "--output", help="output directory (overrides the configuration)")
    c = sub.add_parser("check", help="run the built-in invariant suite")
    c.add_argument("--log", help="also write the log to this file")
    return p


def _cause(exc):
    from .studies import StudyError
    return exc.cause if isinstance(exc, StudyError) else exc


def _print_record(record, out):
    out.write(record.to_csv())


def cmd_solve(config, out):
    from .estimator import effectivity
    from .spaces import write_field
    from .studies import ConvergenceRecord, _out_path, emit_fields, solve_level

    mesh = config.base_mesh()
    row, disc, uh, rep, _ = solve_level(config, mesh, with_factors=config.factors, with_probe=config.probe)
    row["level"] = 0
    record = ConvergenceRecord("solve", [row], meta={"case": config.case, "p": config.p})
    if config.output:
        write_field(uh, _out_path(config, "solution.field"))
        with open(_out_path(config, "estimator.csv"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_csv())
        emit_fields(mesh, {"u_h": uh}, _out_path(config, "solution"), rep)
        record.write(_out_path(config, "solve.csv"))
    eff = effectivity(rep, row["energy_error"])
    if eff.degenerate:
        record.meta["effectivity_note"] = "degenerate (zero error)"
    _print_record(record, out)
    return EXIT_OK


def main(argv=None, out=None):
    out = out or sys.stdout
    err = sys.stderr
    if _thread_error:
        err.write(f"helmdg: {_thread_error}\n")
        return EXIT_CONFIG
    args = _parser().parse_args(argv)
    if args.command == "check":
        from .checks import run_checks
        lines = []

        def log(line):
            lines.append(line)
            out.write(line + "\n")
            out.flush()

        try:
            results = run_checks(log)
        except NumericalError as exc:
            err.write(f"helmdg: numerical failure: {exc}\n")
            return EXIT_NUMERICAL
        ok = all(r.passed for r in results)
        summary = f"{sum(r.passed for r in results)}/{len(results)} checks passed"
        log(summary)
        if args.log:
            try:
                with open(args.log, "w", encoding="utf-8") as fh:
                    fh.write("\n".join(lines) + "\n")
            except OSError as exc:
                err.write(f"helmdg: I/O error: {exc}\n")
                return EXIT_CONFIG
        return EXIT_OK if ok else EXIT_CHECK

    from .studies import load_config, run_adaptive, run_gamma_study, run_study, with_overrides
    try:
        config = load_config(args.config)
        if args.output:
            config = with_overrides(config, output=args.output)
        if args.command == "solve":
            return cmd_solve(config, out)
        if args.command == "study":
            record = run_study(config)
        elif args.command == "adapt":
            record = run_adaptive(with_overrides(config, kind="adaptive"))
        else:
            record = run_gamma_study(with_overrides(config, kind="gamma_ba_scaling"))
        _print_record(record, out)
        return EXIT_OK
    except ConfigError as exc:
        err.write(f"helmdg: configuration error: {exc}\n")
        return EXIT_CONFIG
    except HelmDGError as exc:
        cause = _cause(exc)
        if isinstance(cause, NumericalError):
            err.write(f"helmdg: numerical failure: {exc}\n")
            return EXIT_NUMERICAL
        err.write(f"helmdg: input error: {exc}\n")
        return EXIT_CONFIG
    except OSError as exc:
        err.write(f"helmdg: I/O error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
