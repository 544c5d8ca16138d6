"""The command-line workflow, driven in-process: generate, train, summarize, evaluate."""

# %%
import tempfile
from pathlib import Path

from fcsn.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    small = ["--n-train", "10", "--n-test", "4"]
    assert main(["gen-data", "--out", str(tmp / "data"), *small]) == 0
    assert main(["train", "--data", str(tmp / "data" / "train"), "--checkpoint", str(tmp / "m.ckpt"),
                 "--epochs", "3"]) == 0
    assert main(["summarize", "--checkpoint", str(tmp / "m.ckpt"), "--videos", str(tmp / "data" / "test"),
                 "--out", str(tmp / "summaries")]) == 0
    print((tmp / "summaries" / "synth0010.txt").read_text())
    assert main(["evaluate", "--pred", str(tmp / "summaries"), "--ann", str(tmp / "data" / "test"),
                 "--out", str(tmp / "eval")]) == 0
    main(["bench", "--lengths", "320,640", "--repetitions", "1"])
