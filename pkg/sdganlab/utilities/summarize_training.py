import argparse
import json
import os
import warnings

import numpy as np

from sdganlab.history import HistoryHandler

# final metrics of the runs that are summarized over the seeds
SUMMARY_METRICS = ("frechet_data", "frechet_feature", "modes_hit",
                   "hq_fraction")


class Summarizer:
    """
    Summarize the runs in one or more sdganlab folders.

    For every cell, the final metrics and the trajectory variance are
    averaged over the seeds, and the diverged runs are counted.

    Attributes
    ----------
    folders : str or List
        Path to a sdganlab folder, or to multiple folders as a list.

    """
    def __init__(self, folders):
        self.folders = folders

    @property
    def _folders(self):
        if isinstance(self.folders, str):
            return [self.folders]
        return list(self.folders)

    def summarize_folder(self, folder):
        """
        Statistics of every cell in a folder.

        Returns
        -------
        summary : dict
            Cell name -> dict with the seeds, the number of diverged runs
            and the mean and median of every final metric over the seeds
            that did not diverge (None if there are none).

        """
        by_cell = {}
        for record in HistoryHandler(folder).get_records():
            by_cell.setdefault(record.cell, []).append(record)

        summary = {}
        for cell, records in sorted(by_cell.items()):
            records.sort(key=lambda r: r.seed)
            stats = {"seeds": [r.seed for r in records],
                     "diverged": sum(bool(r.diverged) for r in records)}
            finals = [r.final_row() for r in records if not r.diverged]
            finals = [row for row in finals if row is not None]
            for metric in SUMMARY_METRICS:
                stats[metric] = _mean_median(
                    [row[metric] for row in finals if row[metric] is not None])
            stats["trajectory_variance"] = _mean_median(
                [r.trajectory_variance[0] for r in records
                 if not r.diverged and r.trajectory_variance is not None])
            summary[cell] = stats
        return summary

    def write_summary(self, folder=None):
        """ Write summary.json into the (first) folder. """
        if folder is None:
            folder = self._folders[0]
        content = {"cells": self.summarize_folder(folder)}
        config_file = os.path.join(folder, "config.json")
        if os.path.isfile(config_file):
            with open(config_file) as f:
                content["config_hash"] = json.load(f)["config_hash"]
        path = os.path.join(folder, "summary.json")
        with open(path, "w") as f:
            json.dump(content, f, indent=1, sort_keys=True)
            f.write("\n")
        return path

    def summarize(self):
        """ Print a table of the final metrics of all folders. """
        header = ["folder", "cell", "seeds", "diverged"] + \
            list(SUMMARY_METRICS) + ["trajectory_variance"]
        lines = []
        for folder in self._folders:
            try:
                summary = self.summarize_folder(folder)
            except OSError:
                warnings.warn("Can not summarize {}, skipping...".format(folder))
                continue
            for cell, stats in summary.items():
                line = [folder, cell, str(len(stats["seeds"])),
                        str(stats["diverged"])]
                for metric in header[4:]:
                    value = stats[metric]
                    line.append("n/a" if value is None
                                else "{:.4g}".format(value["mean"]))
                lines.append(line)

        widths = [max(len(row[i]) for row in [header] + lines)
                  for i in range(len(header))]
        for row in [header] + lines:
            print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))


def _mean_median(values):
    values = [float(v) for v in values if np.isfinite(v)]
    if not values:
        return None
    return {"mean": float(np.mean(values)),
            "median": float(np.median(values))}


def main():
    parser = argparse.ArgumentParser(
        description='Summarize the runs of one or more sdganlab folders. '
                    'Prints the final metrics of every cell, averaged '
                    'over the seeds.')
    parser.add_argument('folders', type=str, nargs='*',
                        help='Path to a sdganlab folder. Default: CWD.')
    parser.add_argument('-write', action='store_true',
                        help='Also (re)write the summary.json of the folders.')
    args = vars(parser.parse_args())
    folders = args["folders"] or ["./"]

    summarizer = Summarizer(folders)
    if args["write"]:
        for folder in folders:
            summarizer.write_summary(folder)
    summarizer.summarize()


if __name__ == '__main__':
    main()
