from enum import Enum


class Subcommand(str, Enum):
    eval = "eval"
    reseg = "reseg"
    longeval = "longeval"
    truelat = "truelat"
    compare = "compare"
    anomalous = "anomalous"
    tails = "tails"


class OutputFormat(str, Enum):
    json = "json"
    tsv = "tsv"
