"""``tiser`` command line: parse, solve, infer, build-dataset, evaluate, stats."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import __version__
from .backends import BACKEND_KINDS, BackendConfig, make_backend
from .contexts import parse_context
from .dataset import MATCH_POLICIES, build_detailed, format_sft, load_benchmark, load_questions, normalize_dataset_label
from .errors import SchemaError, TiserError
from .evaluation import EM_POLICIES, aggregate, score, token_overhead
from .pipeline import STOP_POLICIES, PipelineConfig, load_results, result_line, run_batch
from .solver import solve
from .traces import MODES

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2

# Built-in defaults; config files override these and flags override both.
DEFAULTS = {
    "seed": 0,
    "backend": "synthetic",
    "mode": "tiser",
    "max_iterations": 3,
    "stop_policy": "both",
    "parallelism": 1,
    "corruption_rate": 0.0,
    "endpoint": None,
    "model": None,
    "fixtures": None,
    "record": None,
    "script": None,
    "timeout": 120.0,
    "max_retries": 3,
    "max_in_flight": 4,
    "match_policy": "exact_normalized",
    "em_policy": "normalized",
    "template_dir": None,
    "multi_call": False,
    "timing": False,
}


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    backend: Optional[dict] = None
    template_hashes: dict = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    outputs: list = field(default_factory=list)
    version: str = __version__
    exit_code: Optional[int] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def atomic_write(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def template_hashes(template_dir: Optional[str] = None) -> dict:
    out = {}
    root = resources.files("tiser.templates")
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if not entry.name.endswith(".txt"):
            continue
        data = entry.read_bytes()
        if template_dir:
            override = Path(template_dir) / entry.name
            if override.exists():
                data = override.read_bytes()
        out[entry.name] = hashlib.sha256(data).hexdigest()
    return out


def _text_arg(value: str) -> str:
    """A flag value is a path if such a file exists, otherwise literal text."""
    p = Path(value)
    try:
        if p.is_file():
            return p.read_text(encoding="utf-8")
    except OSError:
        pass
    return value


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace, config: dict) -> dict:
    """Merge defaults, then the config file (top level, then ``[command]``), then flags."""
    merged = dict(DEFAULTS)
    section = config.get(args.command.replace("-", "_"), {})
    for source in (
        {k: v for k, v in config.items() if not isinstance(v, dict)},
        {k.replace("-", "_"): v for k, v in section.items()} if isinstance(section, dict) else {},
    ):
        merged.update(source)
    for k, v in vars(args).items():
        if v is not None:
            merged[k] = v
    return merged


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _backend_cfg(opts: dict) -> BackendConfig:
    return BackendConfig(
        kind=opts["backend"],
        endpoint=opts["endpoint"],
        model_name=opts["model"],
        fixture_path=opts["fixtures"],
        corruption_rate=float(opts["corruption_rate"]),
        seed=int(opts["seed"]),
        timeout_s=float(opts["timeout"]),
        max_retries=int(opts["max_retries"]),
        max_in_flight=int(opts["max_in_flight"]),
        record_path=opts["record"],
    )


def _make_backend(opts: dict):
    cfg = _backend_cfg(opts)
    script = None
    if cfg.kind == "scripted":
        if not opts["script"]:
            raise ValueError("scripted backend needs --script (a JSON list of responses)")
        script = json.loads(Path(opts["script"]).read_text(encoding="utf-8"))
    return cfg, make_backend(cfg, script=script)


def _pipeline_cfg(opts: dict, mode: Optional[str] = None) -> PipelineConfig:
    return PipelineConfig(
        mode=mode or opts["mode"],
        max_iterations=int(opts["max_iterations"]),
        stop_policy=opts["stop_policy"],
        single_call=not opts["multi_call"],
        template_dir=opts["template_dir"],
    )


def _progress(enabled: bool):
    if not enabled:
        return None

    def report(done: int, total: int) -> None:
        print(f"progress: {done}/{total}", file=sys.stderr)

    return report


def cmd_parse(opts: dict, manifest: RunManifest) -> int:
    parsed = parse_context(_text_arg(opts["context"]), lenient=bool(opts.get("lenient")))
    _emit(opts, json.dumps(parsed.to_dict(), ensure_ascii=False, indent=2) + "\n", manifest)
    return EXIT_OK


def cmd_solve(opts: dict, manifest: RunManifest) -> int:
    ans = solve(_text_arg(opts["question"]).strip(), _text_arg(opts["context"]))
    _emit(opts, json.dumps(ans.to_dict(), ensure_ascii=False) + "\n", manifest)
    return EXIT_OK if ans.ok else EXIT_ERROR


def cmd_infer(opts: dict, manifest: RunManifest) -> int:
    samples = load_questions(opts["input"])
    bcfg, backend = _make_backend(opts)
    manifest.backend = {"id": backend.backend_id, **bcfg.to_dict()}
    pcfg = _pipeline_cfg(opts)
    manifest.config["pipeline"] = pcfg.to_dict()
    try:
        results = run_batch(samples, backend, pcfg, int(opts["parallelism"]), _progress(opts.get("progress")))
    finally:
        backend.close()
    text = "".join(result_line(r, bool(opts["timing"])) + "\n" for r in results)
    _emit(opts, text, manifest)
    failed = sum(r.stop_reason == "generation_failed" for r in results)
    print(f"{len(results)} results, {failed} failed generations", file=sys.stderr)
    return EXIT_OK


def cmd_build(opts: dict, manifest: RunManifest) -> int:
    sources = load_benchmark(opts["input"], opts.get("dataset"))
    bcfg, backend = _make_backend(opts)
    manifest.backend = {"id": backend.backend_id, **bcfg.to_dict()}
    pcfg = _pipeline_cfg(opts, mode="tiser_with_gold")
    manifest.config["pipeline"] = pcfg.to_dict()
    try:
        kept, stats, _results = build_detailed(
            sources, backend, pcfg, opts["match_policy"], int(opts["parallelism"]), _progress(opts.get("progress"))
        )
    finally:
        backend.close()
    data = "".join(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for s in kept)
    _emit(opts, data, manifest)
    if opts.get("stats_out"):
        atomic_write(opts["stats_out"], json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
        manifest.outputs.append(opts["stats_out"])
    if opts.get("sft_out"):
        rows = "".join(json.dumps(format_sft(s), ensure_ascii=False, sort_keys=True) + "\n" for s in kept)
        atomic_write(opts["sft_out"], rows)
        manifest.outputs.append(opts["sft_out"])
    print(stats.format_table(), file=sys.stderr if not opts.get("out") else sys.stdout)
    return EXIT_OK


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON ({exc.msg})", lineno) from exc
    return rows


def cmd_evaluate(opts: dict, manifest: RunManifest) -> int:
    preds = {}
    for lineno, row in enumerate(_read_jsonl(opts["pred"]), 1):
        pid = row.get("id")
        if pid is None:
            raise SchemaError("prediction without id", lineno)
        preds[str(pid)] = row.get("prediction", row.get("final_answer", row.get("answer", ""))) or ""
    scored = []
    missing = 0
    for lineno, row in enumerate(_read_jsonl(opts["gold"]), 1):
        gid = row.get("id")
        gold = row.get("answer", row.get("answers", row.get("gold")))
        if gid is None or gold in (None, "", []):
            raise SchemaError("gold record needs id and answer", lineno)
        gid = str(gid)
        if gid not in preds:
            missing += 1
        label = normalize_dataset_label(row.get("dataset"))
        scored.append(score(gid, preds.get(gid, ""), gold, label, opts["em_policy"]))
    report = aggregate(scored, em_policy=opts["em_policy"])
    if missing:
        print(f"warning: {missing} gold items have no prediction (scored as empty)", file=sys.stderr)
    if opts.get("json"):
        text = json.dumps(report.to_dict(), indent=2) + "\n"
    else:
        text = report.format_table() + "\n"
    _emit(opts, text, manifest)
    return EXIT_OK


def cmd_stats(opts: dict, manifest: RunManifest) -> int:
    rows = []
    for path in opts["runs"]:
        rows.extend(load_results(path))
    report = token_overhead(rows)
    text = (json.dumps(report.to_dict(), indent=2) if opts.get("json") else report.format_table()) + "\n"
    _emit(opts, text, manifest)
    return EXIT_OK


def _emit(opts: dict, text: str, manifest: RunManifest) -> None:
    out = opts.get("out")
    if out:
        atomic_write(out, text)
        manifest.outputs.append(out)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=BACKEND_KINDS)
    p.add_argument("--endpoint", help="chat-completion URL (http backend)")
    p.add_argument("--model", help="model name sent to the http backend")
    p.add_argument("--fixtures", help="fixture JSONL for the replay backend")
    p.add_argument("--record", help="append every exchange to this fixture JSONL")
    p.add_argument("--script", help="JSON list of canned responses (scripted backend)")
    p.add_argument("--corruption-rate", type=float, dest="corruption_rate")
    p.add_argument("--timeout", type=float, help="per-request timeout in seconds")
    p.add_argument("--max-retries", type=int, dest="max_retries")
    p.add_argument("--max-in-flight", type=int, dest="max_in_flight")
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--stop-policy", choices=STOP_POLICIES, dest="stop_policy")
    p.add_argument("--multi-call", action="store_const", const=True, dest="multi_call",
                   help="one generation per stage instead of one per iteration")
    p.add_argument("--template-dir", dest="template_dir")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--progress", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiser", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file; flags take precedence")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="write output here (atomically) instead of stdout")
    common.add_argument("--manifest", help="where to write the run manifest")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("parse", parents=[common], help="parse a temporal context into facts")
    p.add_argument("--context", required=True, help="file path or literal text")
    p.add_argument("--lenient", action="store_const", const=True)

    p = sub.add_parser("solve", parents=[common], help="answer a question with the symbolic solver")
    p.add_argument("--question", required=True, help="file path or literal text")
    p.add_argument("--context", required=True, help="file path or literal text")

    p = sub.add_parser("infer", parents=[common], help="run the reasoning pipeline over a JSONL file")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--timing", action="store_const", const=True, help="include latencies in the output")
    _add_backend_flags(p)

    p = sub.add_parser("build-dataset", parents=[common], help="generate and filter training traces")
    p.add_argument("--input", required=True)
    p.add_argument("--dataset", help="dataset label for records that lack one")
    p.add_argument("--match-policy", choices=MATCH_POLICIES, dest="match_policy")
    p.add_argument("--stats-out", dest="stats_out")
    p.add_argument("--sft-out", dest="sft_out", help="also write prompt/target pairs")
    _add_backend_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold answers")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--em-policy", choices=EM_POLICIES, dest="em_policy")
    p.add_argument("--json", action="store_const", const=True)

    p = sub.add_parser("stats", parents=[common], help="token usage per stage from pipeline results")
    p.add_argument("--runs", required=True, nargs="+")
    p.add_argument("--json", action="store_const", const=True)
    return parser


COMMANDS = {
    "parse": cmd_parse,
    "solve": cmd_solve,
    "infer": cmd_infer,
    "build-dataset": cmd_build,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    try:
        opts = resolve(args, load_config(args.config))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    seed = int(opts["seed"])
    print(f"seed: {seed}", file=sys.stderr)
    snapshot = {k: v for k, v in sorted(opts.items()) if k not in ("config", "manifest")}
    manifest = RunManifest(args.command, snapshot, seed, template_hashes=template_hashes(opts["template_dir"]),
                           started_at=_now())
    try:
        code = COMMANDS[args.command](opts, manifest)
    except (TiserError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    manifest.finished_at = _now()
    manifest.exit_code = code
    _write_manifest(opts, manifest)
    return code


def _write_manifest(opts: dict, manifest: RunManifest) -> None:
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True, default=str) + "\n"
    path = opts.get("manifest") or (f"{opts['out']}.manifest.json" if opts.get("out") else None)
    if path:
        try:
            atomic_write(path, text)
        except OSError as exc:
            print(f"warning: could not write manifest: {exc}", file=sys.stderr)
    else:
        sys.stderr.write("manifest: " + json.dumps(manifest.to_dict(), sort_keys=True, default=str) + "\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
