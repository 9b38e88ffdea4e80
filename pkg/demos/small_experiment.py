"""A shrunken version of the full experiment through the public pipeline.

Towers train on the training split, policies on predictions over the
validation split, and every number in the table comes from the test split.
A smaller catalogue and fewer epochs keep this to a few minutes on one
core, so the accuracies sit below the full-size run.

    python demos/small_experiment.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from mmfusion.cli import main as cli

CONFIG = """\
seed = 7
opt.text.epochs = 8
opt.image.epochs = 5
policy.sweep = CP-3/2/1, CP-3/2/5, CP-1/1/5
"""


def main(workdir: Path):
    workdir.mkdir(parents=True, exist_ok=True)
    cfg = workdir / "small.cfg"
    cfg.write_text(CONFIG)
    steps = [
        ["gen-data", "--n", "4000"],
        ["train", "text"],
        ["train", "image"],
        ["train", "policy"],
        ["eval"],
    ]
    for step in steps:
        print("mmfusion", " ".join(step))
        code = cli(step + ["--config", str(cfg), "-q"])
        if code:
            sys.exit(code)
    print(f"artifacts in {workdir / 'run'}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mmfusion-")))
