import json
import os

import numpy as np

from sdganlab.in_out import get_subfolder
from sdganlab.logging import RunRecord


class HistoryHandler:
    """
    For reading the records written during training.

    Every run of a cell leaves a csv file with one line per evaluation
    and a json file with the complete record in the train_log folder.

    """
    def __init__(self, main_folder):
        self.main_folder = main_folder

    @property
    def train_log_folder(self):
        return get_subfolder(self.main_folder, "train_log")

    @property
    def summary_file(self):
        return os.path.join(self.main_folder, "summary.json")

    def get_record_names(self):
        """ Names of all finished runs, e.g. baseline-aug_seed0. """
        if not os.path.isdir(self.train_log_folder):
            return []
        return sorted(file[:-len(".json")]
                      for file in os.listdir(self.train_log_folder)
                      if file.endswith(".json"))

    def get_record(self, name):
        """ The RunRecord of one run. """
        path = os.path.join(self.train_log_folder, name + ".json")
        with open(path) as f:
            return RunRecord.from_dict(json.load(f))

    def get_records(self):
        return [self.get_record(name) for name in self.get_record_names()]

    def get_record_data(self, name):
        """
        Read out the csv file of a run.

        Returns
        -------
        ndarray
            Structured array with the column names as fields. n/a entries
            are nan.

        """
        path = os.path.join(self.train_log_folder, name + ".csv")
        data = np.genfromtxt(path, names=True, delimiter=",", skip_header=1,
                             missing_values="n/a", filling_values=np.nan)
        return np.atleast_1d(data)

    def get_config_hash(self, name):
        """ The config hash in the head line of the csv file of a run. """
        path = os.path.join(self.train_log_folder, name + ".csv")
        with open(path) as f:
            line = f.readline().strip()
        prefix = "# config_hash: "
        if not line.startswith(prefix):
            raise ValueError("{} has no config hash in its first line".format(
                path))
        return line[len(prefix):]

    def get_summary(self):
        with open(self.summary_file) as f:
            return json.load(f)
