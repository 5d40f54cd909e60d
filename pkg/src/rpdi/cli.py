"""Command-line entry point: ``rpdi <subcommand> [flags]``.

Every subcommand reads settings the same way (flag > environment > config
file > default). Failures print one JSON object on stderr, followed by a
human-readable line, and exit nonzero (2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from rpdi import __version__
from rpdi.config import CONFIG_ENV, ConfigError, Settings, load_settings
from rpdi.policy import Variant
from rpdi.tracelab.schema import Trace, TraceError, load_trace, write_trace

DEFAULT_SEED = 0

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE, **details: Any):
        super().__init__(message)
        self.kind = kind
        self.code = code
        self.details = details


def _report(kind: str, message: str, **details: Any) -> None:
    record = {"error": kind, "message": message}
    record.update({k: v for k, v in details.items() if v is not None})
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
    if details.get("usage"):
        print(details["usage"], file=sys.stderr)
    print(f"rpdi: error: {message}", file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise CliError("usage", message, EXIT_USAGE, command=self.prog, usage=self.format_usage().strip())


# -- flag parsing helpers ---------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help=f"YAML config file (default: ${CONFIG_ENV})")


def _add_policy_flags(p: argparse.ArgumentParser, grid: bool = False) -> None:
    g = p.add_argument_group("policy")
    if not grid:
        g.add_argument("--window", type=int, help="sliding window W in tokens (default 512)")
        g.add_argument("--lambda", dest="threshold", type=float, help="exit threshold on RPDI (default 2.0)")
        g.add_argument("--variant", choices=[v.value for v in Variant])
    g.add_argument("--budget", type=int, help="total token budget, thinking plus answer (default 16384)")
    g.add_argument("--answer-reserve", type=int, help="tokens kept for the answer when thinking runs out")
    g.add_argument("--tail-policy", choices=["renormalize", "ignore-tail"])
    g.add_argument("--marker", dest="termination_marker", help="thinking terminator (default </think>)")
    g.add_argument("--boundary-set", help='JSON list of boundary token suffixes, e.g. \'["\\n\\n", "."]\'')


def _policy_overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "policy.window": getattr(args, "window", None),
        "policy.threshold": getattr(args, "threshold", None),
        "policy.budget": getattr(args, "budget", None),
        "policy.answer_reserve": getattr(args, "answer_reserve", None),
        "policy.variant": getattr(args, "variant", None),
        "policy.tail_policy": getattr(args, "tail_policy", None),
        "policy.termination_marker": getattr(args, "termination_marker", None),
        "policy.boundary_set": getattr(args, "boundary_set", None),
    }


def _settings(args: argparse.Namespace, extra: dict[str, Any] | None = None) -> Settings:
    overrides = _policy_overrides(args)
    overrides.update(extra or {})
    settings = load_settings(args.config, overrides=overrides)
    settings.policy.validate()
    return settings


def _load_traces(paths: Sequence[str], jobs: int = 1) -> list[Trace]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            found = sorted(p.glob("*.jsonl"))
            if not found:
                raise CliError("no_traces", f"no *.jsonl files in {p}")
            files.extend(found)
        elif p.exists():
            files.append(p)
        else:
            raise CliError("not_found", f"no such file: {p}", path=str(p))
    if jobs > 1 and len(files) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(load_trace, files))
    return [load_trace(f) for f in files]


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# -- subcommands ------------------------------------------------------------

def cmd_replay(args: argparse.Namespace) -> int:
    from rpdi.tracelab.replay import replay

    settings = _settings(args)
    traces = _load_traces(args.trace)
    if (args.series or args.transcript) and len(traces) != 1:
        raise CliError("usage", "--series and --transcript need exactly one trace", EXIT_USAGE)
    for trace in traces:
        result = replay(trace, settings.policy, record_series=bool(args.series))
        kind, step, rpdi = result.outcome_tuple()
        print(json.dumps({"trace": trace.name, "outcome": [kind, step, rpdi],
                          "answer_budget": result.answer_budget}))
        if args.series:
            _write(result.series_csv(), args.series)
        if args.transcript:
            _write(result.transcript, args.transcript)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    from rpdi.tracelab.sweep import sweep

    for v in args.variants or []:
        if v not in {x.value for x in Variant}:
            raise CliError("usage", f"unknown variant {v!r}", EXIT_USAGE)
    # the base config is validated with the first grid cell, not the default window
    first = {
        "policy.window": args.windows[0] if args.windows else None,
        "policy.threshold": args.thresholds[0] if args.thresholds else None,
        "policy.variant": args.variants[0] if args.variants else None,
    }
    settings = _settings(args, first)
    traces = _load_traces(args.trace, args.jobs)
    base = settings.policy
    windows = args.windows or [base.window]
    thresholds = args.thresholds or [base.threshold]
    variants = args.variants or [base.variant.value]
    result = sweep(traces, windows, thresholds, variants, base=base, jobs=args.jobs)
    _write(result.to_csv(), args.out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    from rpdi.tracelab.analytics import entropy_contribution_bins, frequency_csv, top_contributor_tokens

    traces = _load_traces(args.trace, args.jobs)
    thinking_only = not args.include_answer
    bins = entropy_contribution_bins(traces, args.bins, thinking_only=thinking_only)
    top = top_contributor_tokens(traces, args.top_fraction, thinking_only=thinking_only)
    if args.bins_out:
        _write(bins.to_csv(), args.bins_out)
    if args.tokens_out:
        _write(frequency_csv(top), args.tokens_out)
    summary = {
        "tokens": bins.n_tokens,
        "bins": args.bins,
        "total_entropy": bins.total_entropy,
        "all_zero": bins.all_zero,
        "bottom_60pct_share": bins.cumulative_share(round(0.6 * args.bins)),
        "top_tokens": top[: args.show],
    }
    print(json.dumps(summary, ensure_ascii=False))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    from rpdi.tracelab.synth import builtin_profile, synth_trace

    overrides = {}
    if args.length is not None:
        overrides["length"] = args.length
    if args.count == 1:
        trace = synth_trace(builtin_profile(args.profile, args.seed, **overrides))
        if args.out in (None, "-"):
            write_trace(trace, sys.stdout)
        else:
            trace.dump(args.out)
        return EXIT_OK
    if args.out in (None, "-"):
        raise CliError("usage", "--count > 1 needs --out DIR", EXIT_USAGE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        trace = synth_trace(builtin_profile(args.profile, seed, **overrides))
        trace.dump(out / f"{trace.name}.jsonl")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    traces = _load_traces(args.trace)
    for t in traces:
        print(json.dumps({"trace": t.name, "ok": True, "records": len(t),
                          "thinking": t.thinking_length, "answer": len(t.answer_records())}))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from rpdi.gateway.server import serve

    extra = {
        "upstream.base_url": args.upstream,
        "upstream.logprobs_top_k": args.top_k,
        "upstream.request_timeout": args.request_timeout,
        "upstream.completion_style": args.completion_style,
        "gateway.host": args.host,
        "gateway.port": args.port,
        "gateway.monitoring": False if args.no_monitoring else None,
        "gateway.health_check": False if args.skip_health_check else None,
    }
    settings = _settings(args, extra)
    if args.print_config:
        from rpdi.config import settings_as_dict

        print(json.dumps(settings_as_dict(settings), ensure_ascii=False))
        return EXIT_OK
    serve(settings)
    return EXIT_OK


def cmd_mock_upstream(args: argparse.Namespace) -> int:
    import uvicorn

    from rpdi.gateway.mock import MockUpstream

    traces = _load_traces(args.trace)
    mock = MockUpstream(traces, token_delay=args.token_delay)
    uvicorn.run(mock.app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rpdi", description="Entropy-based early exit for reasoning models.")
    parser.add_argument("--version", action="version", version=f"rpdi {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("serve", help="run the monitoring gateway")
    _add_config(p)
    _add_policy_flags(p)
    g = p.add_argument_group("gateway")
    g.add_argument("--host")
    g.add_argument("--port", type=int)
    g.add_argument("--upstream", metavar="URL", help="upstream base URL")
    g.add_argument("--top-k", type=int, help="top logprobs requested per token")
    g.add_argument("--request-timeout", type=float)
    g.add_argument("--completion-style", choices=["chat", "raw-completion"])
    g.add_argument("--no-monitoring", action="store_true", help="relay upstream streams untouched")
    g.add_argument("--skip-health-check", action="store_true")
    g.add_argument("--print-config", action="store_true", help="print resolved settings and exit")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="replay the policy over recorded traces")
    _add_config(p)
    _add_policy_flags(p)
    p.add_argument("--trace", nargs="+", required=True, metavar="PATH", help="trace files or directories")
    p.add_argument("--series", metavar="CSV", help="write per-step entropy/LTF/GTF/RPDI")
    p.add_argument("--transcript", metavar="PATH", help="write the client-visible text")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="replay over a (window, lambda, variant) grid")
    _add_config(p)
    _add_policy_flags(p, grid=True)
    # grid axes; unset axes fall back to the resolved single setting
    p.add_argument("--window", dest="windows", type=_int_list, metavar="W1,W2,...")
    p.add_argument("--lambda", dest="thresholds", type=_float_list, metavar="L1,L2,...")
    p.add_argument("--variant", dest="variants", type=_str_list, metavar="V1,V2,...")
    p.add_argument("--trace", nargs="+", required=True, metavar="PATH")
    p.add_argument("--out", metavar="CSV", help="output file (default stdout)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="entropy contribution bins and top tokens")
    _add_config(p)
    p.add_argument("--trace", nargs="+", required=True, metavar="PATH")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--top-fraction", type=float, default=0.2)
    p.add_argument("--include-answer", action="store_true", help="count answer-phase tokens too")
    p.add_argument("--bins-out", metavar="CSV")
    p.add_argument("--tokens-out", metavar="CSV")
    p.add_argument("--show", type=int, default=10, help="top tokens in the summary line")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate synthetic traces")
    p.add_argument("--profile", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--count", type=int, default=1, help="traces to write, seeds seed..seed+count-1")
    p.add_argument("--length", type=int, help="override the profile's thinking length")
    p.add_argument("--out", metavar="PATH", help="file, or directory when --count > 1 (default stdout)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-trace", help="check trace files against the schema")
    p.add_argument("trace", nargs="+", metavar="PATH")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("mock-upstream", help="serve traces as a scripted upstream")
    p.add_argument("--trace", nargs="+", required=True, metavar="PATH")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--token-delay", type=float, default=0.0, help="seconds between tokens")
    p.set_defaults(func=cmd_mock_upstream)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    from rpdi.tracelab.synth import ProfileError

    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise CliError("usage", "--jobs must be >= 1", EXIT_USAGE)
        return args.func(args)
    except CliError as exc:
        _report(exc.kind, str(exc), **exc.details)
        return exc.code
    except TraceError as exc:
        _report("trace", str(exc), record=exc.record, source=exc.source)
        return EXIT_FAILURE
    except ConfigError as exc:
        _report("config", str(exc))
        return EXIT_FAILURE
    except ProfileError as exc:
        _report("profile", str(exc))
        return EXIT_FAILURE
    except (OSError, ValueError, RuntimeError) as exc:
        _report(type(exc).__name__, str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
