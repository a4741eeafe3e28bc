"""
Run the experiments of sdganlab.

Usage:
    sdgan dirac [options]
    sdgan train [options]
    sdgan ablate [options]
    sdgan finetune [options] CHECKPOINT
    sdgan rank [options] CHECKPOINT
    sdgan (-h | --help)
    sdgan --version

Commands:
    dirac       Simulate the Dirac-GAN and sweep its stability.
    train       Train the cell given in [sd] for every seed.
    ablate      Train the grid of cells given in [ablation] for every seed.
    finetune    Continue the training of a checkpoint, see [finetune].
    rank        Rank samples of a checkpoint by SD distance and D score.

Arguments:
    CHECKPOINT  Path to a checkpoint json file in saved_models/, or the
                output folder of a training: then the latest checkpoint
                of the cell in [sd] with the first seed is used.

Options:
    -h --help             Show this screen.
    --version             Show the version.
    -c --config CONFIG    A .toml or .json file which overwrites some of the
                          default settings. The possible parameters are
                          listed in core.py in the class Configuration.
    -o --out FOLDER       Folder where everything gets saved to. Overwrites
                          output_dir of the config.
    -s --seeds SEEDS      Comma separated seeds, e.g. 0,1,2. Overwrites the
                          seeds of the config.
    -t --threads N        Number of worker processes. Overwrites threads of
                          the config.

Exit codes:
    0  success
    1  invalid configuration or checkpoint
    2  every run diverged
    3  output folder not writable or input not readable

"""
import sys

from docopt import docopt

from sdganlab.__version__ import version
from sdganlab.core import Configuration, Organizer
from sdganlab.exceptions import CheckpointError, ConfigError

COMMAND_MODES = {
    "dirac": "dirac_study",
    "train": "train",
    "ablate": "ablate",
    "finetune": "finetune",
    "rank": "rank",
}

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


def _parse_int_list(text, name):
    try:
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise ConfigError("{}: expected comma separated integers, got "
                          "{!r}".format(name, text)) from None


def make_configuration(args):
    """ The Configuration of the config file, with the command line
    options applied on top. """
    cfg = Configuration(args["--config"])
    cfg.mode = next(mode for command, mode in COMMAND_MODES.items()
                    if args[command])
    if args["--out"] is not None:
        cfg.output_dir = args["--out"]
    if args["--seeds"] is not None:
        cfg.seeds = _parse_int_list(args["--seeds"], "seeds")
    if args["--threads"] is not None:
        cfg.threads = _parse_int_list(args["--threads"], "threads")[0]
    cfg.validate()
    return cfg


def run_sdgan(args):
    """
    Run the command given on the command line.

    Returns
    -------
    int
        The exit code.

    """
    cfg = make_configuration(args)
    result = Organizer(cfg=cfg).run(checkpoint=args["CHECKPOINT"])
    if cfg.mode in ("train", "ablate", "finetune") and result and \
            all(record.diverged for record in result):
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None):
    args = docopt(__doc__, argv=argv, version=version)
    try:
        code = run_sdgan(args)
    except (ConfigError, CheckpointError) as e:
        print("Error: {}".format(e), file=sys.stderr)
        code = EXIT_CONFIG
    except OSError as e:
        print("Error: {}".format(e), file=sys.stderr)
        code = EXIT_IO
    sys.exit(code)


if __name__ == '__main__':
    main()
