"""Drive the command line end to end: generate, train, evaluate, estimate, ablate.

Everything lands in a temporary directory that is printed at the start.
Equivalent shell commands are ``python -m vcilab <subcommand> ...``.
"""
import json
import tempfile
from pathlib import Path

from vcilab.cli import main

work = Path(tempfile.mkdtemp(prefix="vcilab-demo-"))
print("working in", work)
data = work / "lg.jsonl"
cfg = work / "config.json"
cfg.write_text(json.dumps({"hidden": 32, "depth": 1, "epochs": 5}))


def run(*argv):
    print("\n$ vcilab", " ".join(argv))
    code = main(list(argv))
    assert code == 0, code


run("generate", "--benchmark", "linear_gaussian", "--n", "2000", "--seed", "1", "--out", str(data))
run("train", "--data", str(data), "--out", str(work / "run"), "--config", str(cfg))
run("evaluate", "--checkpoint", str(work / "run" / "final.ckpt"), "--data", str(data),
    "--metrics", "cf_mse,oracle_kl", "--out", str(work / "metrics.json"))
print(json.loads((work / "metrics.json").read_text())["values"])
run("estimate", "--checkpoint", str(work / "run" / "final.ckpt"), "--data", str(data), "--alpha", "1",
    "--out", str(work / "estimates"))
print((work / "estimates" / "estimates.csv").read_text().splitlines()[:4])
run("ablate", "--data", str(data), "--config", str(cfg), "--modes", "hae,sae,vci", "--seeds", "0",
    "--epochs", "3", "--out", str(work / "ablation.csv"))
print((work / "ablation.csv").read_text())
