# src/qpbench/main.py
import argparse
import asyncio
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv # For local development using .env file

from . import __version__
from .backends import open_backend
from .errors import (
    AssessmentError,
    BackendError,
    ConfigError,
    JournalError,
    ProtocolError,
    QPBenchError,
    ReportError,
    SimulationError,
    TopologyError,
    WorkflowError,
)
from .journal import JournalWriter, read_journal
from .models import Path, ProtocolId, Stage
from .protocols import build_circuit, export_circuit, load_registry, variants_for
from .report import (
    ProtocolVector,
    chip_score,
    consistency_overlap,
    emit_charts,
    empty_vector,
    pair_count_table,
    protocol_vector,
    swap_distance_series,
)
from .run_config import RunConfig, load_run_config, parse_list, parse_thresholds
from .topology import enumerate_paths, export_document, load_topology, make_subchip
from .utils.constants import (
    CHARTS_DIRNAME,
    CHARTS_FILENAME,
    JOURNAL_FILENAME,
    PAIRS_FILENAME,
    SCORES_FILENAME,
    SWAPDIST_FILENAME,
    VECTOR_FILENAME,
)
from .workflow import AssessmentState, create_state, resume, run_assessment

# Global logger for the module
logger = logging.getLogger("qpbench")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_JOURNAL = 4
EXIT_SPEC = 5
EXIT_INTERRUPTED = 130

# First match wins, so subclasses go before their bases.
EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (ReportError, EXIT_CONFIG),
    (BackendError, EXIT_BACKEND),
    (SimulationError, EXIT_BACKEND),
    (AssessmentError, EXIT_BACKEND),
    (JournalError, EXIT_JOURNAL),
    (WorkflowError, EXIT_JOURNAL),
    (TopologyError, EXIT_SPEC),
    (ProtocolError, EXIT_SPEC),
)

REPORT_KINDS = ("vector", "scores", "swapdist", "pairs", "overlap", "charts")


def setup_logging(log_level_str: str):
    """Configures basic logging for the command-line tool."""
    numeric_level = getattr(logging, log_level_str.upper(), None)
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO
        logger.warning(f"Invalid log level '{log_level_str}'. Defaulting to INFO.")

    logging.basicConfig(
        level=numeric_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def exit_code_for(error: BaseException) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(error, kind):
            return code
    return EXIT_UNEXPECTED


def _dump(document: Any) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def _write_json(path: str, document: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(_dump(document))
    logger.info(f"Wrote {path}")


def _parse_ints(raw: str, what: str) -> List[int]:
    try:
        return [int(x) for x in parse_list(raw)]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of integers, got '{raw}'") from None


# --- Parser ---

def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topo", dest="topology", help="Bundled topology name (eagle, heron) or a topology file")
    p.add_argument("--backend", help="sim://default, mock://<dir> or http(s)://<host>")
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-p1", dest="noise_p1", type=float)
    p.add_argument("--noise-p2", dest="noise_p2", type=float)
    p.add_argument("--noise-readout", dest="noise_readout", type=float)
    p.add_argument("--noise-damping", dest="noise_damping", type=float)
    p.add_argument("--mode", choices=("strict", "independent"))
    p.add_argument("--protocols", help="Comma-separated protocol names (default: all)")
    p.add_argument("--threshold", action="append", metavar="PROTOCOL=VALUE",
                   help="Override a protocol threshold; repeatable")
    p.add_argument("--protocol-doc", dest="protocol_doc", help="Protocol definition document overriding templates")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--budget", type=int, help="Maximum number of circuits to execute in this invocation")
    p.add_argument("--max-reruns", dest="max_reruns", type=int)
    p.add_argument("--haar-samples", dest="haar_samples", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--cancel-rate", dest="cancel_rate", type=float)
    p.add_argument("--clock", choices=("wall", "logical"))
    p.add_argument("--feed-forward", dest="feed_forward", action="store_true", default=None)
    p.add_argument("--allow-zero-swap", dest="allow_zero_swap", action="store_true", default=None)
    p.add_argument("--decompose-swap", dest="decompose_swap", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpbench", description="Protocol-level benchmarking of quantum chips")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", dest="log_level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("paths", help="List the path set of a stage on a rectangle or pair")
    p.add_argument("--topo", dest="topology")
    p.add_argument("--rect", required=True, help="Rectangle index, or two adjacent indices like 1,5")
    p.add_argument("--stage", required=True, help="c2c, M-L or A-L")
    p.add_argument("--protocol", help="Apply this protocol's minimum path length")
    p.add_argument("--mode", choices=("strict", "independent"), default="independent")
    p.add_argument("--allow-zero-swap", dest="allow_zero_swap", action="store_true", default=None)
    p.add_argument("--show", action="store_true", help="Print every path")

    p = sub.add_parser("run", help="Run the optimal lookup workflow")
    _add_run_options(p)
    p.add_argument("--resume", action="store_true", help="Continue from the journal under --out")
    p.add_argument("--svg", action="store_true", help="Also write SVG charts")

    p = sub.add_parser("report", help="Emit a report from journals or protocol vector files")
    p.add_argument("kind", choices=REPORT_KINDS)
    p.add_argument("inputs", nargs="+", help="Journal (.jsonl) or protocol vector (.json) files")
    p.add_argument("--protocol")
    p.add_argument("--n0", type=int, help="Rectangle count the scores are normalized by")
    p.add_argument("--output", help="Write the report here instead of stdout")

    p = sub.add_parser("circuit", help="Export one protocol circuit document")
    p.add_argument("--protocol", required=True)
    p.add_argument("--path", required=True, help="Comma-separated qubit ids")
    p.add_argument("--variant", help="Variant label (default: the first one)")
    p.add_argument("--format", choices=("yaml", "json"), default="yaml")
    p.add_argument("--feed-forward", dest="feed_forward", action="store_true", default=None)
    p.add_argument("--allow-zero-swap", dest="allow_zero_swap", action="store_true", default=None)
    p.add_argument("--protocol-doc", dest="protocol_doc")
    p.add_argument("--output")

    p = sub.add_parser("topology", help="Topology document utilities")
    topo_sub = p.add_subparsers(dest="topology_command", required=True)
    e = topo_sub.add_parser("export", help="Write a topology as a YAML (or .json) document")
    e.add_argument("source", help="Bundled name or topology file")
    e.add_argument("--output", required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Maps parsed flags onto RunConfig overrides; flags left unset fall back to QPB_ variables."""
    overrides: Dict[str, Any] = {}
    for name in RunConfig.__dataclass_fields__:
        if name in ("protocols", "thresholds"):
            continue
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "protocols", None):
        overrides["protocols"] = parse_list(args.protocols)
    elif getattr(args, "command", None) == "circuit":
        overrides["protocols"] = [args.protocol]
    if getattr(args, "threshold", None):
        overrides["thresholds"] = parse_thresholds(",".join(args.threshold))
    return load_run_config(overrides)


# --- Commands ---

def cmd_paths(args: argparse.Namespace, config: RunConfig) -> int:
    topology = load_topology(config.topology)
    try:
        stage = Stage.parse(args.stage)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    subchip = make_subchip(topology, _parse_ints(args.rect, "--rect"))
    min_len = 2
    if args.protocol:
        registry = load_registry(config.protocol_doc)
        min_len = registry.get(args.protocol).effective_min_len(config.allow_zero_swap)
    pathset = enumerate_paths(subchip, stage, min_len, strict=args.mode == "strict")
    print(f"{topology.name} {subchip.label} {stage.value}: {len(pathset)} paths")
    if args.show:
        for path in pathset:
            print(path.label)
    return EXIT_OK


def write_reports(state: AssessmentState, out_dir: str, svg: bool = False) -> List[str]:
    """Writes the protocol vector, scores, pair table, swap-distance series and chart rows under out_dir."""
    written = []
    vector = protocol_vector(state)

    def put(filename: str, document: Any) -> None:
        target = os.path.join(out_dir, filename)
        _write_json(target, document)
        written.append(target)

    put(VECTOR_FILENAME, vector.to_document())
    put(SCORES_FILENAME, [chip_score(vector, p).to_document() for p in state.protocols])
    put(PAIRS_FILENAME, {p.value: c.to_document() for p, c in pair_count_table(state).items()})
    put(SWAPDIST_FILENAME, {p.value: swap_distance_series(state, p).to_document() for p in state.protocols})
    try:
        rows = emit_charts(state, "rows")
    except ReportError as e:
        logger.info(f"No chart rows: {e}")
        rows = {"rect_rows": [], "swap_rows": []}
    put(CHARTS_FILENAME, rows)
    if svg and rows["rect_rows"]:
        chart_dir = os.path.join(out_dir, CHARTS_DIRNAME)
        os.makedirs(chart_dir, exist_ok=True)
        for filename, text in sorted(emit_charts(state, "svg").items()):
            target = os.path.join(chart_dir, filename)
            with open(target, "w", encoding="utf-8") as f:
                f.write(text)
            written.append(target)
    return written


def cmd_run(args: argparse.Namespace, config: RunConfig) -> int:
    os.makedirs(config.out_dir, exist_ok=True)
    journal_path = os.path.join(config.out_dir, JOURNAL_FILENAME)
    registry = load_registry(config.protocol_doc)
    backend = open_backend(config.backend, config.backend_settings())

    if args.resume and os.path.exists(journal_path):
        explicit = args.topology or os.getenv("QPB_TOPOLOGY")
        topology = load_topology(config.topology) if explicit else None
        state = resume(journal_path, topology=topology, append=True, registry=registry)
    else:
        if args.resume:
            logger.info(f"No journal at {journal_path}; starting a fresh assessment")
        elif os.path.exists(journal_path):
            logger.warning(f"Overwriting existing journal {journal_path} (use --resume to continue it)")
        topology = load_topology(config.topology)
        state = create_state(topology, config.mode, config.protocol_ids(), config.thresholds or None,
                             config.workflow_settings(), registry, journal=JournalWriter(journal_path))

    try:
        summary = asyncio.run(run_assessment(state, backend, budget=config.budget, max_reruns=config.max_reruns))
    finally:
        state.journal.close()

    write_reports(state, config.out_dir, svg=args.svg)
    print(f"{summary.tasks_run} task(s), {summary.circuits_run} circuit(s) run; "
          f"{len(summary.open_tasks)} task(s) open")
    for task in summary.open_tasks:
        print(f"open: {task.label} ({len(task.pathset)} paths)")
    if summary.budget_exhausted:
        print(f"Stopped at the circuit budget of {config.budget}; rerun with --resume to continue")
    return EXIT_OK


def _load_input(path: str) -> Optional[Any]:
    """A resumed AssessmentState for journals, a ProtocolVector for .json files, None for an empty journal."""
    if path.endswith(".json"):
        try:
            with open(path, "r", encoding="utf-8") as f:
                return ProtocolVector.from_document(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ReportError(f"Cannot read protocol vector '{path}': {e}") from e
    if not read_journal(path):
        return None
    return resume(path)


def _vector_of(source: Any) -> Optional[ProtocolVector]:
    if source is None or isinstance(source, ProtocolVector):
        return source
    return protocol_vector(source)


def build_report(kind: str, inputs: Sequence[str], protocol: Optional[str] = None,
                 n0: Optional[int] = None) -> Any:
    if kind not in REPORT_KINDS:
        raise ReportError(f"Unknown report kind '{kind}'. Expected one of {list(REPORT_KINDS)}")
    if kind == "overlap":
        if len(inputs) != 2:
            raise ReportError("The overlap report compares exactly two runs")
        a, b = (_vector_of(_load_input(p)) for p in inputs)
        if a is None or b is None:
            raise ReportError("The overlap report needs two non-empty runs")
        chosen = [ProtocolId.parse(protocol)] if protocol else [p for p in a.protocols if p in b.protocols]
        return [consistency_overlap(a, b, p) for p in chosen]

    if len(inputs) != 1:
        raise ReportError(f"The {kind} report reads exactly one input")
    source = _load_input(inputs[0])
    if kind == "vector":
        vector = _vector_of(source)
        return vector.to_document() if vector else empty_vector()
    if kind == "scores":
        vector = _vector_of(source)
        if vector is None:
            return []
        chosen = [ProtocolId.parse(protocol)] if protocol else list(vector.protocols)
        return [chip_score(vector, p, n0).to_document() for p in chosen]

    if source is None:
        return {} if kind != "charts" else {"rect_rows": [], "swap_rows": []}
    if isinstance(source, ProtocolVector):
        raise ReportError(f"The {kind} report needs a journal, not a protocol vector file")
    if kind == "pairs":
        return {p.value: c.to_document() for p, c in pair_count_table(source).items()}
    if kind == "charts":
        return emit_charts(source, "rows")
    chosen = [ProtocolId.parse(protocol)] if protocol else list(source.protocols)
    return {p.value: swap_distance_series(source, p).to_document() for p in chosen}


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    document = build_report(args.kind, args.inputs, args.protocol, args.n0)
    if args.output:
        _write_json(args.output, document)
    else:
        sys.stdout.write(_dump(document))
    return EXIT_OK


def cmd_circuit(args: argparse.Namespace, config: RunConfig) -> int:
    registry = load_registry(config.protocol_doc)
    path = Path(tuple(_parse_ints(args.path, "--path")))
    variants = variants_for(args.protocol, config.haar_samples, config.seed, registry)
    if args.variant:
        matching = [v for v in variants if v.label == args.variant]
        if not matching:
            raise ProtocolError(f"Unknown variant '{args.variant}' for {args.protocol}. "
                                f"Expected one of {[v.label for v in variants]}")
        variant = matching[0]
    else:
        variant = variants[0]
    circuit = build_circuit(args.protocol, path, variant, config.feed_forward, config.allow_zero_swap, registry)
    text = export_circuit(circuit, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"Wrote circuit {circuit.label} to {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_topology(args: argparse.Namespace, config: RunConfig) -> int:
    export_document(load_topology(args.source), args.output)
    return EXIT_OK


COMMANDS = {
    "paths": cmd_paths,
    "run": cmd_run,
    "report": cmd_report,
    "circuit": cmd_circuit,
    "topology": cmd_topology,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command and returns its exit code."""
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        setup_logging(config.log_level)
        return COMMANDS[args.command](args, config)
    except KeyboardInterrupt:
        logger.error("Interrupted")
        return EXIT_INTERRUPTED
    except QPBenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"Fatal error in main: {e}", exc_info=True)
        return EXIT_UNEXPECTED


def main_cli():
    """Main entry point for the qpbench command. Loads .env for local development."""
    if os.path.exists(".env"):
        load_dotenv(override=True)
    elif os.path.exists("../.env"):
        load_dotenv(dotenv_path="../.env", override=True)
    sys.exit(main())


if __name__ == "__main__":
    main_cli()
