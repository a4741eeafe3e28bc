"""
Scripts for writing the logfiles.
"""

import json
from dataclasses import dataclass, field, asdict
from datetime import datetime

import numpy as np

# Columns of the csv file written for every run of a cell.
RECORD_COLUMNS = ("step", "loss_D", "loss_G_adv", "loss_SD", "alpha",
                  "frechet_data", "frechet_feature", "modes_hit",
                  "hq_fraction", "diverged")


def format_cell(entry):
    """
    Render one value for a csv file.

    Floats get the shortest representation that reads back to the same
    bits (at most 17 significant digits), None and nan become n/a.

    """
    if entry is None:
        return "n/a"
    if isinstance(entry, str):
        return entry
    if isinstance(entry, (bool, np.bool_)):
        return str(int(entry))
    if isinstance(entry, (int, np.integer)):
        return str(int(entry))
    entry = float(entry)
    if np.isnan(entry):
        return "n/a"
    return repr(entry)


def gen_line_cells(data):
    """ The cells of one csv line, see format_cell. """
    return [format_cell(entry) for entry in data]


def gen_line_str(data, seperator=","):
    return seperator.join(gen_line_cells(data))


class CsvLogger:
    """
    For writing a csv file line by line.

    The file starts with a comment line holding the config hash, followed
    by the header row.

    """
    def __init__(self, log_file, column_names, config_hash):
        """
        Parameters
        ----------
        log_file : opened file
            The logfile.
        column_names : List
            A list of column names for the file.
        config_hash : str
            Hash of the configuration the file belongs to.

        """
        self.log_file = log_file
        self.column_names = tuple(column_names)
        self.config_hash = config_hash
        self._leveled = False

    def level_file(self):
        """ Write the head lines. """
        self.log_file.write("# config_hash: {}\n".format(self.config_hash))
        self.log_file.write(",".join(self.column_names) + "\n")
        self._leveled = True

    def write_line(self, values):
        """
        Write a line with data to the file.

        Parameters
        ----------
        values : List or dict
            The data, in the same order as the column names, or a dict
            with the column names as keys. Missing keys become n/a.

        """
        if not self._leveled:
            raise ValueError("Can not log: .level_file has to be called first")
        if isinstance(values, dict):
            unknown = set(values) - set(self.column_names)
            if unknown:
                raise KeyError("Can not log: unknown columns {}".format(
                    sorted(unknown)))
            values = [values.get(name) for name in self.column_names]
        if len(values) != len(self.column_names):
            raise ValueError("Can not log: Expected {} values, but got "
                             "{}".format(len(self.column_names), len(values)))
        self.log_file.write(gen_line_str(values) + "\n")


def write_csv(path, column_names, rows, config_hash):
    """ Write a complete csv file with CsvLogger. """
    with open(path, "w") as f:
        logger = CsvLogger(f, column_names, config_hash)
        logger.level_file()
        for row in rows:
            logger.write_line(row)


@dataclass
class RunRecord:
    """
    Logged outputs of the training of one seed of one cell.

    Attributes
    ----------
    config_hash : str
    cell : str
        Name of the cell, e.g. sd-feature-aug or baseline-noaug.
    seed : int
    rows : List
        One dict per evaluation, keys RECORD_COLUMNS, ordered by step.
    trajectory_variance : List or None
        (mean, std) over the latents of the checkpoint series, None if
        the run diverged before two checkpoints were taken.
    wall_time : float
        In seconds.
    diverged : bool
    message : str
        Diagnostic of the divergence, empty otherwise.

    """
    config_hash: str
    cell: str
    seed: int
    rows: list = field(default_factory=list)
    trajectory_variance: list = None
    wall_time: float = 0.
    diverged: bool = False
    message: str = ""

    def add_row(self, row):
        if self.rows and row["step"] < self.rows[-1]["step"]:
            raise ValueError("Rows have to be ordered by step, got step {} "
                             "after {}".format(row["step"], self.rows[-1]["step"]))
        self.rows.append(row)

    def final_row(self):
        """ The last row with metrics, or None. """
        for row in reversed(self.rows):
            if row.get("frechet_data") is not None and \
                    np.isfinite(row["frechet_data"]):
                return row
        return None

    @property
    def name(self):
        return "{}_seed{}".format(self.cell, self.seed)

    def to_dict(self):
        record = asdict(self)
        record["rows"] = [{key: _jsonable(value) for key, value in row.items()}
                          for row in self.rows]
        return record

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, record):
        return cls(**record)


def _jsonable(value):
    """ nan is stored as None, numpy scalars as python numbers. """
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (np.bool_, )):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    value = float(value)
    return None if np.isnan(value) else value


def log_start_run(orga, what):
    """
    Log the start of a study, training or fine-tuning in the log.txt.

    Parameters
    ----------
    orga : sdganlab.core.Organizer
    what : str
        E.g. "training".

    """
    lines = [
        "",
        "-" * 60,
        "Starting {} of sdganlab at {}".format(
            what, datetime.now().strftime("%Y-%m-%d %H:%M:%S")),
        "Output folder: {}".format(orga.cfg.output_folder),
        "Config hash: {}".format(orga.cfg.config_hash),
        "Seeds: {}".format(", ".join(str(s) for s in orga.cfg.seeds)),
    ]
    non_defaults = orga.cfg.non_default_values()
    if non_defaults:
        lines.append("Non-default settings:")
        for key, value in non_defaults.items():
            lines.append("   {}: {}".format(key, value))
    else:
        lines.append("Using only default settings")
    lines.append("-" * 60)
    orga.io.print_log(lines)
