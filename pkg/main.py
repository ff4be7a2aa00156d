import logging
from collections.abc import Callable
from pathlib import Path
from typing import Annotated

import typer
from rich.console import Console
from rich.logging import RichHandler

import src.config as config
import src.pipeline as pipeline
from latency.data import REFERENCE_KINDS
from latency.errors import LatencyError
from latency.metaeval import SampleMode
from latency.textproc import LangMode
from src.kind import OutputFormat, Subcommand

app = typer.Typer(help="Latency evaluation for simultaneous speech translation.", no_args_is_help=True)
err_console = Console(stderr=True)

ConfigOpt = Annotated[
    Path | None, typer.Option("--config", help="JSON file with default settings.", exists=True, dir_okay=False)
]
OutOpt = Annotated[Path | None, typer.Option("--out", "-o", help="Report file, standard output if omitted.")]
FormatOpt = Annotated[OutputFormat | None, typer.Option("--format", help="Report format.")]
LangModeOpt = Annotated[LangMode | None, typer.Option(help="Tokenization: whitespace words or characters.")]
MetricsOpt = Annotated[str | None, typer.Option(help="Comma-separated metrics, e.g. AL,LAAL,YAAL.")]
SecondsOpt = Annotated[bool, typer.Option("--seconds", help="source_length is given in seconds.")]
FixOpt = Annotated[bool, typer.Option("--fix-monotonic", help="Repair non-monotone delays with a running maximum.")]
JobsOpt = Annotated[int | None, typer.Option(help="Parallel workers, -1 for all cores.")]
RunsOpt = Annotated[Path, typer.Option("--runs", help="Directory of run reports.", exists=True, file_okay=False)]
ThresholdOpt = Annotated[float | None, typer.Option(help="Flag runs with O_e - O above this value.")]


def _run(action: Callable[[], None]) -> None:
    try:
        action()
    except LatencyError as e:
        err_console.print(f"error: {e}", style="red", markup=False, highlight=False)
        raise typer.Exit(code=1) from e


@app.callback()
def setup(verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Show debug messages.")] = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False, show_time=False)],
        force=True,
    )


@app.command("eval")
def eval_(
    logs: Annotated[Path, typer.Option(help="Instance log, one JSON record per segment.", exists=True, dir_okay=False)],
    refs: Annotated[
        Path | None, typer.Option(help="References, one line per segment.", exists=True, dir_okay=False)
    ] = None,
    align_tables: Annotated[
        Path | None, typer.Option(help="Alignment tables, one JSON line per segment.", exists=True, dir_okay=False)
    ] = None,
    metrics: MetricsOpt = None,
    lang_mode: LangModeOpt = None,
    seconds: SecondsOpt = False,
    fix_monotonic: FixOpt = False,
    system: Annotated[str | None, typer.Option(help="System id, the log file name by default.")] = None,
    testset: Annotated[str | None, typer.Option(help="Test set id, the reference file name by default.")] = None,
    lang_pair: Annotated[str | None, typer.Option(help="Language pair, e.g. en-de.")] = None,
    jobs: JobsOpt = None,
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Score a short-form instance log."""

    def action():
        conf = config.RunConfig(
            Subcommand.eval,
            config_file,
            inputs={"logs": logs, "refs": refs, "align_tables": align_tables},
            metrics=metrics,
            lang_mode=lang_mode,
            seconds=seconds or None,
            fix_monotonic=fix_monotonic or None,
            system=system,
            testset=testset,
            lang_pair=lang_pair,
            jobs=jobs,
            format=output_format,
        )
        needs = [kind.value for kind in conf.metric_kinds() if kind in REFERENCE_KINDS]
        if refs is None and needs:
            raise typer.BadParameter(f"{', '.join(needs)} need the reference file", param_hint="'--refs'")
        pipeline.Pipeline(conf).cmd_eval(logs, refs, align_tables, out)

    _run(action)


@app.command()
def reseg(
    logs: Annotated[
        list[Path], typer.Option(help="Stream log(s), one record per stream.", exists=True, dir_okay=False)
    ],
    manifest: Annotated[
        list[Path], typer.Option(help="Stream manifest, once per stream in log order.", exists=True, dir_okay=False)
    ],
    lang_mode: LangModeOpt = None,
    seconds: SecondsOpt = False,
    fix_monotonic: FixOpt = False,
    jobs: JobsOpt = None,
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Split stream hypotheses into reference segments."""

    def action():
        conf = config.RunConfig(
            Subcommand.reseg,
            config_file,
            inputs={"logs": logs, "manifest": manifest},
            lang_mode=lang_mode,
            seconds=seconds or None,
            fix_monotonic=fix_monotonic or None,
            jobs=jobs,
            format=output_format,
        )
        pipeline.Pipeline(conf).cmd_reseg(logs, manifest, out)

    _run(action)


@app.command()
def longeval(
    logs: Annotated[
        list[Path], typer.Option(help="Stream log(s), one record per stream.", exists=True, dir_okay=False)
    ],
    manifest: Annotated[
        list[Path], typer.Option(help="Stream manifest, once per stream in log order.", exists=True, dir_okay=False)
    ],
    segmentation: Annotated[
        list[Path] | None,
        typer.Option(
            help="External segmentation (reseg JSON, or text with one segment per line) to report StreamLAAL.",
            exists=True,
            dir_okay=False,
        ),
    ] = None,
    align_tables: Annotated[
        list[Path] | None,
        typer.Option(help="Alignment tables of a stream, one JSON line per segment.", exists=True, dir_okay=False),
    ] = None,
    metrics: MetricsOpt = None,
    lang_mode: LangModeOpt = None,
    seconds: SecondsOpt = False,
    fix_monotonic: FixOpt = False,
    system: Annotated[str | None, typer.Option(help="System id, the log file name by default.")] = None,
    testset: Annotated[str | None, typer.Option(help="Test set id, the first manifest name by default.")] = None,
    lang_pair: Annotated[str | None, typer.Option(help="Language pair, e.g. en-de.")] = None,
    jobs: JobsOpt = None,
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Score resegmented streams with the long-form metrics."""

    def action():
        conf = config.RunConfig(
            Subcommand.longeval,
            config_file,
            inputs={"logs": logs, "manifest": manifest, "segmentation": segmentation, "align_tables": align_tables},
            metrics=metrics,
            lang_mode=lang_mode,
            seconds=seconds or None,
            fix_monotonic=fix_monotonic or None,
            system=system,
            testset=testset,
            lang_pair=lang_pair,
            jobs=jobs,
            format=output_format,
        )
        pipeline.Pipeline(conf).cmd_longeval(logs, manifest, segmentation or [], align_tables or [], out)

    _run(action)


@app.command()
def truelat(
    logs: Annotated[Path, typer.Option(help="Instance log, one JSON record per segment.", exists=True, dir_okay=False)],
    align_tables: Annotated[
        Path, typer.Option(help="Alignment tables, one JSON line per segment.", exists=True, dir_okay=False)
    ],
    lang_mode: LangModeOpt = None,
    seconds: SecondsOpt = False,
    fix_monotonic: FixOpt = False,
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Compute true latency from alignment tables."""

    def action():
        conf = config.RunConfig(
            Subcommand.truelat,
            config_file,
            inputs={"logs": logs, "align_tables": align_tables},
            lang_mode=lang_mode,
            seconds=seconds or None,
            fix_monotonic=fix_monotonic or None,
            format=output_format,
        )
        pipeline.Pipeline(conf).cmd_truelat(logs, align_tables, out)

    _run(action)


@app.command()
def compare(
    runs: RunsOpt,
    metrics: MetricsOpt = None,
    seed: Annotated[int | None, typer.Option(help="Bootstrap seed.")] = None,
    bootstrap_n: Annotated[int | None, typer.Option(help="Bootstrap resamples.")] = None,
    mw_samples: Annotated[
        SampleMode | None, typer.Option(help="Mann-Whitney samples: per-segment TL or per-token gaps.")
    ] = None,
    exclude_anomalous: Annotated[bool, typer.Option(help="Also report pairs without anomalous runs.")] = False,
    anomaly_threshold: ThresholdOpt = None,
    correlations: Annotated[bool, typer.Option(help="Add Pearson and Kendall columns (diagnostic only).")] = False,
    pairs_out: Annotated[Path | None, typer.Option(help="Write one TSV row per compared pair.")] = None,
    jobs: JobsOpt = None,
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Measure how often each metric ranks run pairs like true latency."""

    def action():
        conf = config.RunConfig(
            Subcommand.compare,
            config_file,
            inputs={"runs": runs},
            metrics=metrics,
            seed=seed,
            n_resamples=bootstrap_n,
            mw_samples=mw_samples,
            anomaly_threshold=anomaly_threshold,
            jobs=jobs,
            format=output_format,
        )
        pipeline.Pipeline(conf).cmd_compare(runs, exclude_anomalous, correlations, pairs_out, out)

    _run(action)


@app.command()
def anomalous(
    runs: RunsOpt,
    metric: Annotated[str, typer.Option(help="Latency metric behind the expected online fraction.")] = "YAAL",
    anomaly_threshold: ThresholdOpt = None,
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Compare observed and expected online fractions of every run."""

    def action():
        conf = config.RunConfig(
            Subcommand.anomalous,
            config_file,
            inputs={"runs": runs},
            anomaly_threshold=anomaly_threshold,
            format=output_format,
        )
        pipeline.Pipeline(conf).cmd_anomalous(runs, metric, out)

    _run(action)


@app.command()
def tails(
    runs: RunsOpt,
    metric: Annotated[str, typer.Option(help="Latency metric used to bin the runs.")] = "YAAL",
    output_format: FormatOpt = None,
    out: OutOpt = None,
    config_file: ConfigOpt = None,
) -> None:
    """Mean tail fraction per one-second latency bin."""

    def action():
        conf = config.RunConfig(Subcommand.tails, config_file, inputs={"runs": runs}, format=output_format)
        pipeline.Pipeline(conf).cmd_tails(runs, metric, out)

    _run(action)


if __name__ == "__main__":
    app()
