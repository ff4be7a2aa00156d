import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader
from joblib import Parallel, delayed
from rich.console import Console
from rich.progress import BarColumn, Progress, TaskProgressColumn, TextColumn, TimeRemainingColumn
from tqdm import tqdm

from latency import logio, longform, metaeval, shortform
from latency.data import (
    REFERENCE_KINDS,
    AlignmentTable,
    LongKind,
    MetricKind,
    MetricValue,
    SegmentHypothesis,
    StreamRecord,
)
from latency.errors import ParseError, UndefinedInputError, ValidationError
from latency.softsegmenter import Resegmentation, resegment_stream
from latency.true_latency import SegmentTrueLatency, segment_true_latency, true_latency_stream

from .config import SCHEMA_VERSION, RunConfig
from .kind import OutputFormat

logger = logging.getLogger(__name__)
console = Console(stderr=True)


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise ParseError(f"Cannot read {path}: {e.strerror}") from e


def _compute(kind: MetricKind, seg: SegmentHypothesis, ref_len: int | None) -> MetricValue:
    if kind not in REFERENCE_KINDS:
        ref_len = ref_len or None
    try:
        return shortform.compute(kind, seg, ref_len)
    except UndefinedInputError as e:
        logger.warning("Segment %s: %s", seg.index, e)
        return MetricValue.undefined(kind)


@dataclass(frozen=True)
class ScoredSegment:
    entry: dict[str, Any]
    values: dict[MetricKind, MetricValue]
    true_latency: MetricValue | None


def score_segment(
    position: int,
    seg: SegmentHypothesis,
    ref_len: int | None,
    kinds: list[MetricKind],
    table: AlignmentTable | None,
) -> ScoredSegment:
    values = {kind: _compute(kind, seg, ref_len) for kind in kinds}

    tl: SegmentTrueLatency | None = None
    if table is not None:
        try:
            tl = segment_true_latency(seg, table)
        except ValidationError as e:
            raise ValidationError(f"Segment {position}: {e}") from e

    entry = {
        "index": seg.index if seg.index is not None else position,
        "n_tokens": len(seg),
        "n_tail": shortform.tail_count(seg),
        "source_duration_ms": seg.source_duration_ms,
        "metrics": {kind.value: value.as_json() for kind, value in values.items()},
        "true_latency": tl.value.as_json() if tl is not None else None,
        "tl_gaps": list(tl.gaps) if tl is not None else [],
    }
    return ScoredSegment(entry, values, tl.value if tl is not None else None)


@dataclass(frozen=True)
class ScoredStream:
    segmentation: Resegmentation
    values: dict[LongKind, longform.StreamMetricValue]
    entries: list[dict[str, Any]]
    true_latency: list[MetricValue]
    hypotheses: list[SegmentHypothesis]


def score_stream(
    position: int,
    stream: StreamRecord,
    kinds: list[MetricKind],
    external: Resegmentation | None,
    tables: list[AlignmentTable] | None,
) -> ScoredStream:
    try:
        segmentation = resegment_stream(stream)
        values = {}
        for kind in kinds:
            value = longform.stream_metric(stream, kind, segmentation, allow_undefined=True)
            values[value.kind] = value
        if external is not None:
            values[LongKind.StreamLAAL] = longform.stream_laal_compat(stream, external, allow_undefined=True)
        tl = true_latency_stream(stream, tables, segmentation) if tables is not None else None
    except (ValidationError, UndefinedInputError) as e:
        raise type(e)(f"Stream {position}: {e}") from e

    for value in values.values():
        if not value.defined:
            logger.warning("Stream %d: %s is undefined on every segment", position, value.kind.value)

    entries = []
    for assigned in segmentation.segments:
        seg = assigned.hypothesis() if assigned.tokens else None
        entry = {
            "stream_index": position,
            "index": assigned.index,
            "n_tokens": len(assigned.tokens),
            "n_tail": shortform.tail_count(seg) if seg is not None else 0,
            "source_duration_ms": assigned.reference.duration_ms,
            "metrics": {
                kind.value: value.per_segment[assigned.index].as_json()["value"] for kind, value in values.items()
            },
            "true_latency": tl[assigned.index].value.as_json() if tl is not None else None,
            "tl_gaps": list(tl[assigned.index].gaps) if tl is not None else [],
        }
        entries.append(entry)

    return ScoredStream(
        segmentation,
        values,
        entries,
        [result.value for result in tl] if tl is not None else [],
        longform.resegmented_hypotheses(segmentation),
    )


class Pipeline:
    def __init__(self, config: RunConfig):
        self.config = config

        self.env = Environment(loader=FileSystemLoader(self.config.p_templates), keep_trailing_newline=True)
        self.env.filters["cell"] = self.__filter_cell

    def __filter_cell(self, value):
        if value is None:
            return "NA"
        if isinstance(value, bool):
            return "yes" if value else "no"
        if isinstance(value, float):
            return "NA" if math.isnan(value) else f"{value:.4f}"
        return " ".join(str(value).split())

    def __progress(self) -> Progress:
        return Progress(
            TaskProgressColumn(),
            BarColumn(),
            TimeRemainingColumn(),
            TextColumn("[progress.description]{task.description}"),
            transient=True,
            console=console,
        )

    def __parallel(self) -> Parallel:
        return Parallel(n_jobs=self.config.jobs, return_as="generator")

    def __header(self, kind: str) -> dict[str, Any]:
        return {"schema_version": SCHEMA_VERSION, "kind": kind, "config": self.config.resolved()}

    def __render_json(self, report: dict[str, Any]) -> str:
        return json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    def __render_table(self, columns: list[str], rows: list[list[Any]]) -> str:
        return self.env.get_template("table.tsv.j2").render(columns=columns, rows=rows)

    def __write(self, outputs: list[tuple[str, Path | None]]):
        # Everything is rendered before the first file is touched.
        for text, path in outputs:
            if path is None:
                sys.stdout.write(text)
                sys.stdout.flush()
            else:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text, encoding="utf-8")

    def __corpus(self, values: list[MetricValue]) -> dict[str, Any]:
        try:
            aggregate = shortform.corpus_aggregate(values)
        except UndefinedInputError:
            logger.warning("%s is undefined on every segment", values[0].kind.value if values else "metric")
            return {"value": None, "n_defined": 0, "skipped": len(values)}
        return {"value": aggregate.value, "n_defined": aggregate.n_defined, "skipped": aggregate.skipped}

    def __stream_corpus(self, values: list[longform.StreamMetricValue]) -> dict[str, Any]:
        try:
            return longform.corpus_mean(values).as_json()
        except UndefinedInputError:
            logger.warning("%s is undefined on every stream", values[0].kind.value)
            return {"value": None, "n_defined": 0, "skipped": sum(value.skipped for value in values)}

    def __tail_fractions(self, segments: list[SegmentHypothesis]) -> dict[str, float | None]:
        try:
            tail_fraction = shortform.tail_fraction(segments)
        except UndefinedInputError:
            logger.warning("No hypothesis token, the tail fraction is undefined")
            return {"tail_fraction": None, "online_fraction": None}
        return {"tail_fraction": tail_fraction, "online_fraction": 1.0 - tail_fraction}

    def __run_ids(self, logs: Path, refs: Path | None) -> dict[str, str]:
        return {
            "system_id": self.config.system or logs.stem,
            "testset_id": self.config.testset or (refs.stem if refs is not None else "unknown"),
            "language_pair": self.config.lang_pair or "unknown",
        }

    def __load_segments(self, logs: Path) -> list[SegmentHypothesis]:
        return logio.parse_instance_log(
            _read(logs), self.config.lang_mode, seconds=self.config.seconds, fix_monotonic=self.config.fix_monotonic
        )

    def __load_tables(self, path: Path, n_expected: int, what: str) -> list[AlignmentTable]:
        tables = logio.load_alignment_tables(_read(path))
        if len(tables) != n_expected:
            raise ValidationError(f"{path} holds {len(tables)} alignment tables for {n_expected} {what}")
        return tables

    def __load_streams(self, logs: list[Path], manifests: list[Path]) -> list[StreamRecord]:
        hypotheses = [seg for path in logs for seg in self.__load_segments(path)]
        if len(hypotheses) != len(manifests):
            raise ValidationError(f"Got {len(hypotheses)} stream hypotheses for {len(manifests)} manifests")

        streams = []
        for position, (hypothesis, manifest) in enumerate(zip(hypotheses, manifests, strict=True)):
            try:
                record = logio.load_stream_manifest(_read(manifest), self.config.lang_mode)
                streams.append(record.with_hypothesis(hypothesis))
            except ValidationError as e:
                raise ValidationError(f"Stream {position} ({manifest}): {e}") from e
        return streams

    def cmd_eval(self, logs: Path, refs: Path | None, align_tables: Path | None, out: Path | None):
        segments = self.__load_segments(logs)
        if not segments:
            raise ValidationError(f"{logs} holds no instance")

        references = logio.load_references(_read(refs), self.config.lang_mode) if refs is not None else None
        if references is not None and len(references) != len(segments):
            raise ValidationError(f"{refs} holds {len(references)} references for {len(segments)} instances")
        kinds = self.config.metric_kinds()
        if references is None and any(kind in REFERENCE_KINDS for kind in kinds):
            needs = ", ".join(kind.value for kind in kinds if kind in REFERENCE_KINDS)
            raise ValidationError(f"{needs} need a reference file")
        tables = self.__load_tables(align_tables, len(segments), "instances") if align_tables is not None else None

        with self.__progress() as progress:
            task = progress.add_task(f"Scoring {logs.name} ...", total=len(segments))
            scored = []
            for result in self.__parallel()(
                delayed(score_segment)(
                    position,
                    seg,
                    len(references[position].tokens) if references is not None else None,
                    kinds,
                    tables[position] if tables is not None else None,
                )
                for position, seg in enumerate(segments)
            ):
                scored.append(result)
                progress.advance(task)

        report = {
            **self.__header("run"),
            **self.__run_ids(logs, refs),
            "regime": "short-form",
            "corpus": {kind.value: self.__corpus([s.values[kind] for s in scored]) for kind in kinds},
            **self.__tail_fractions(segments),
            "segments": [s.entry for s in scored],
            "true_latency": self.__corpus([s.true_latency for s in scored]) if tables is not None else None,
        }

        if self.config.format == OutputFormat.tsv:
            columns = ["index", "n_tokens", "n_tail", "source_duration_ms", *(k.value for k in kinds), "TL"]
            rows = [
                [
                    entry["index"],
                    entry["n_tokens"],
                    entry["n_tail"],
                    entry["source_duration_ms"],
                    *(entry["metrics"][k.value] for k in kinds),
                    entry["true_latency"],
                ]
                for entry in report["segments"]
            ]
            rows.append(
                [
                    "corpus",
                    sum(entry["n_tokens"] for entry in report["segments"]),
                    sum(entry["n_tail"] for entry in report["segments"]),
                    None,
                    *(report["corpus"][k.value]["value"] for k in kinds),
                    report["true_latency"]["value"] if report["true_latency"] is not None else None,
                ]
            )
            self.__write([(self.__render_table(columns, rows), out)])
        else:
            self.__write([(self.__render_json(report), out)])

    def cmd_reseg(self, logs: list[Path], manifests: list[Path], out: Path | None):
        streams = self.__load_streams(logs, manifests)
        segmentations = list(self.__parallel()(delayed(resegment_stream)(stream) for stream in streams))

        if self.config.format == OutputFormat.tsv:
            rows = [
                [position, segment.index, len(segment.tokens), segment.text]
                for position, segmentation in enumerate(segmentations)
                for segment in segmentation.segments
            ]
            self.__write([(self.__render_table(["stream", "segment", "n_tokens", "text"], rows), out)])
            return

        report = {
            **self.__header("resegmentation"),
            "streams": [
                {
                    "stream_index": position,
                    "score": segmentation.score,
                    "segments": [segment.as_json() for segment in segmentation.segments],
                }
                for position, segmentation in enumerate(segmentations)
            ],
        }
        self.__write([(self.__render_json(report), out)])

    def __external_segmentation(self, path: Path, stream: StreamRecord, position: int) -> Resegmentation:
        if path.suffix == ".json":
            return logio.load_segmentation_json(_read(path), stream, position)
        return logio.load_segmentation_text(_read(path), stream, self.config.lang_mode)

    def cmd_longeval(
        self,
        logs: list[Path],
        manifests: list[Path],
        segmentations: list[Path],
        align_tables: list[Path],
        out: Path | None,
    ):
        streams = self.__load_streams(logs, manifests)
        if segmentations and len(segmentations) not in (1, len(streams)):
            raise ValidationError(f"Got {len(segmentations)} segmentations for {len(streams)} streams")
        if align_tables and len(align_tables) != len(streams):
            raise ValidationError(f"Got {len(align_tables)} alignment table files for {len(streams)} streams")

        externals = []
        for position, stream in enumerate(streams):
            if not segmentations:
                externals.append(None)
                continue
            # A single segmentation file may hold every stream in the shape written by reseg.
            path = segmentations[position] if len(segmentations) > 1 else segmentations[0]
            index = position if len(segmentations) == 1 else 0
            externals.append(self.__external_segmentation(path, stream, index))
        tables = (
            [
                self.__load_tables(path, len(stream.references), "segments")
                for path, stream in zip(align_tables, streams, strict=True)
            ]
            if align_tables
            else []
        )

        kinds = self.config.metric_kinds()
        with self.__progress() as progress:
            task = progress.add_task("Resegmenting streams ...", total=len(streams))
            scored: list[ScoredStream] = []
            for result in self.__parallel()(
                delayed(score_stream)(
                    position, stream, kinds, externals[position], tables[position] if tables else None
                )
                for position, stream in enumerate(streams)
            ):
                scored.append(result)
                progress.advance(task)

        long_kinds = list(scored[0].values)
        first = logs[0]
        report = {
            **self.__header("run"),
            **self.__run_ids(first, manifests[0]),
            "regime": "long-form",
            "corpus": {
                kind.value: self.__stream_corpus([stream.values[kind] for stream in scored]) for kind in long_kinds
            },
            **self.__tail_fractions([seg for stream in scored for seg in stream.hypotheses]),
            "segments": [entry for stream in scored for entry in stream.entries],
            "streams": [
                stream.values[kind].as_json(manifests[position].stem)
                for position, stream in enumerate(scored)
                for kind in long_kinds
            ],
            "true_latency": self.__corpus([v for stream in scored for v in stream.true_latency]) if tables else None,
        }

        if self.config.format == OutputFormat.tsv:
            columns = ["stream", "kind", "value", "skipped"]
            rows = [
                [manifests[position].stem, kind.value, stream.values[kind].value, stream.values[kind].skipped]
                for position, stream in enumerate(scored)
                for kind in long_kinds
            ]
            rows.extend(["corpus", name, entry["value"], entry["skipped"]] for name, entry in report["corpus"].items())
            if report["true_latency"] is not None:
                rows.append(["corpus", "TL", report["true_latency"]["value"], report["true_latency"]["skipped"]])
            self.__write([(self.__render_table(columns, rows), out)])
        else:
            self.__write([(self.__render_json(report), out)])

    def cmd_truelat(self, logs: Path, align_tables: Path, out: Path | None):
        segments = self.__load_segments(logs)
        tables = self.__load_tables(align_tables, len(segments), "instances")

        results = []
        for position, (seg, table) in enumerate(zip(segments, tables, strict=True)):
            try:
                results.append(segment_true_latency(seg, table))
            except ValidationError as e:
                raise ValidationError(f"Segment {position}: {e}") from e
        corpus = self.__corpus([result.value for result in results])

        entries = [
            {
                "index": seg.index if seg.index is not None else position,
                "true_latency": result.value.as_json(),
                "n_eligible": len(result.gaps),
            }
            for position, (seg, result) in enumerate(zip(segments, results, strict=True))
        ]
        if self.config.format == OutputFormat.tsv:
            rows = [[entry["index"], entry["n_eligible"], entry["true_latency"]] for entry in entries]
            rows.append(["corpus", sum(entry["n_eligible"] for entry in entries), corpus["value"]])
            self.__write([(self.__render_table(["index", "n_eligible", "TL"], rows), out)])
        else:
            report = {**self.__header("true_latency"), "corpus": corpus, "segments": entries}
            self.__write([(self.__render_json(report), out)])

    def __load_runs(self, runs_dir: Path, need_true_latency: bool) -> list[metaeval.SystemRun]:
        if not runs_dir.is_dir():
            raise ParseError(f"{runs_dir} is not a directory")

        runs = []
        for path in tqdm(sorted(runs_dir.glob("*.json")), desc="Loading runs", leave=False, file=sys.stderr):
            try:
                report = json.loads(_read(path).decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                raise ParseError(f"{path} is not a JSON run report: {e}") from e
            if not isinstance(report, dict) or report.get("kind") != "run":
                continue
            run = metaeval.SystemRun.from_report(report)
            if need_true_latency and run.true_latency is None:
                tqdm.write(f"Skipping {path.name}: the run has no true latency", file=sys.stderr)
                continue
            runs.append(run)
        return runs

    def __compare_metrics(self, runs: list[metaeval.SystemRun]) -> list[str]:
        if self.config.metrics is not None:
            return self.config.metrics
        shared = [name for name in runs[0].scores if name != MetricKind.TL.value]
        return [name for name in shared if all(name in run.scores for run in runs)]

    def __anomaly_metric(self, run: metaeval.SystemRun, metric: str) -> str:
        # Long-form runs carry the Long variant of the requested metric.
        if metric not in run.scores and f"Long{metric}" in run.scores:
            return f"Long{metric}"
        return metric

    def cmd_compare(
        self,
        runs_dir: Path,
        exclude_anomalous: bool,
        correlations: bool,
        pairs_out: Path | None,
        out: Path | None,
    ):
        runs = self.__load_runs(runs_dir, need_true_latency=True)
        if len(runs) < 2:
            raise ValidationError(f"Comparing needs at least two runs with true latency, found {len(runs)}")
        metrics = self.__compare_metrics(runs)
        if not metrics:
            raise ValidationError("The runs share no metric")

        outcomes, skipped = metaeval.compare_runs(runs, metrics, self.config.mw_samples)
        if not outcomes:
            raise UndefinedInputError("No two runs share a test set and language pair")

        subsets = [("all", outcomes)]
        if exclude_anomalous:
            flagged = {
                run.system_id
                for run in runs
                if metaeval.detect_anomalous(
                    run, self.__anomaly_metric(run, MetricKind.YAAL.value), self.config.anomaly_threshold
                ).flagged
            }
            logger.info("%d anomalous run(s) excluded: %s", len(flagged), ", ".join(sorted(flagged)) or "none")
            subsets.append(("no_anomalous", metaeval.without_anomalous(outcomes, flagged)))

        rows: list[metaeval.AccuracyRow] = []
        with self.__progress() as progress:
            task = progress.add_task("Bootstrapping ...", total=len(subsets) * len(metaeval.Bucket) * len(metrics))
            for subset, selected in subsets:
                if not selected:
                    logger.warning("No comparison left in subset %s", subset)
                    continue

                def on_cell(metric: str, bucket: metaeval.Bucket, subset: str = subset):
                    progress.update(task, advance=1, description=f"Bootstrapping {metric} ({subset}, {bucket.value})")

                rows.extend(
                    metaeval.accuracy_table(
                        selected,
                        metrics,
                        self.config.n_resamples,
                        self.config.seed,
                        subset=subset,
                        n_jobs=self.config.jobs,
                        correlations=correlations,
                        on_cell=on_cell,
                    )
                )

        outputs = []
        if self.config.format == OutputFormat.tsv:
            text = self.env.get_template("compare.tsv.j2").render(rows=rows, correlations=correlations)
        else:
            report = {
                **self.__header("compare"),
                "n_runs": len(runs),
                "n_pairs": len(outcomes),
                "skipped_pairs": skipped,
                "metrics": metrics,
                "rows": [row.as_json() for row in rows],
            }
            text = self.__render_json(report)
        outputs.append((text, out))

        if pairs_out is not None:
            columns = ["system_a", "system_b", "testset", "language_pair", "delta_tl", "p_value", *metrics]
            pair_rows = [
                [
                    outcome.system_a,
                    outcome.system_b,
                    outcome.testset_id,
                    outcome.language_pair,
                    outcome.delta_tl,
                    outcome.p_value,
                    *(outcome.delta_metric[metric] for metric in metrics),
                ]
                for outcome in outcomes
            ]
            outputs.append((self.__render_table(columns, pair_rows), pairs_out))

        self.__write(outputs)

    def cmd_anomalous(self, runs_dir: Path, metric: str, out: Path | None):
        runs = self.__load_runs(runs_dir, need_true_latency=False)
        if not runs:
            raise ValidationError(f"No run report in {runs_dir}")
        checks = [
            metaeval.detect_anomalous(run, self.__anomaly_metric(run, metric), self.config.anomaly_threshold)
            for run in runs
        ]

        if self.config.format == OutputFormat.tsv:
            text = self.env.get_template("anomalous.tsv.j2").render(checks=checks, metric=metric)
        else:
            text = self.__render_json({**self.__header("anomalous"), "runs": [check.as_json() for check in checks]})
        self.__write([(text, out)])

    def cmd_tails(self, runs_dir: Path, metric: str, out: Path | None):
        runs = self.__load_runs(runs_dir, need_true_latency=False)
        if not runs:
            raise ValidationError(f"No run report in {runs_dir}")
        bins = metaeval.tail_fraction_by_regime(runs, self.__anomaly_metric(runs[0], metric))

        if self.config.format == OutputFormat.tsv:
            rows = [[b.low_ms, b.high_ms, b.tail_fraction, b.n_systems] for b in bins]
            text = self.__render_table(["low_ms", "high_ms", "tail_fraction", "n_systems"], rows)
        else:
            text = self.__render_json({**self.__header("tails"), "metric": metric, "bins": [b.as_json() for b in bins]})
        self.__write([(text, out)])
