"""On-disk layout of a run directory.

manifest.json        config echo, per-chain seeds, input/output hashes, status
metrics.csv          tidy: engine, chain, tick, agent, metric, value
samples.csv          engine, chain, tick, agent, w0..w{d-1}
comm_stats.csv       engine, chain, agent, gos, pct_gos, et, pct_et, never_active
data.csv             synthetic mixture observations (one column ``x``)
grid.bin/grid.json   oracle log cell masses (float64, row-major) + header
wasserstein.csv      engine, chain, agent, sliced_w1, w1_theta1, w1_theta2
accuracy.csv         engine, tick, agent, updates, accuracy
accuracy_final.csv   engine, agent, updates, accuracy
theory_constants.json
events.jsonl         one {"engine", "chain", "k", "i", "j"} object per tick
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform

import numpy as np

from gossip_langevin import __version__
from gossip_langevin.errors import MissingDataError
from gossip_langevin.sampler import RunTrace

MANIFEST = "manifest.json"


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_csv(path: str | os.PathLike, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_metrics(path, traces: dict[str, list[RunTrace]]) -> None:
    def rows():
        for engine, chain_traces in traces.items():
            for c, tr in enumerate(chain_traces):
                for r, k in enumerate(tr.record_ticks.tolist()):
                    yield (engine, c, k, "", "consensus_error", repr(float(tr.consensus_error[r])))
                    for a in range(tr.n):
                        yield (engine, c, k, a, "tau", int(tr.tau_history[r, a]))
                        yield (engine, c, k, a, "broadcasts", int(tr.broadcast_history[r, a]))

    write_csv(path, ["engine", "chain", "tick", "agent", "metric", "value"], rows())


def write_samples(path, traces: dict[str, list[RunTrace]]) -> None:
    d = next(iter(traces.values()))[0].d_w

    def rows():
        for engine, chain_traces in traces.items():
            for c, tr in enumerate(chain_traces):
                for r, k in enumerate(tr.sample_ticks.tolist()):
                    for a in range(tr.n):
                        yield [engine, c, k, a] + [repr(float(v)) for v in tr.samples[r, a]]

    write_csv(path, ["engine", "chain", "tick", "agent"] + [f"w{j}" for j in range(d)], rows())


def write_events(path, traces: dict[str, list[RunTrace]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for engine, chain_traces in traces.items():
            for c, tr in enumerate(chain_traces):
                if tr.events is None:
                    continue
                for k, i, j in tr.events.tolist():
                    fh.write(json.dumps({"engine": engine, "chain": c, "k": k, "i": i, "j": j}) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_manifest(out_dir, config: dict, seeds: dict, inputs: dict, wall_time: float, status: str, extra=None) -> dict:
    outputs = {}
    for name in sorted(os.listdir(out_dir)):
        p = os.path.join(out_dir, name)
        if name != MANIFEST and os.path.isfile(p):
            outputs[name] = sha256_file(p)
    manifest = {
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": round(wall_time, 3),
        "status": status,
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
    }
    if extra:
        manifest.update(extra)
    write_json(os.path.join(out_dir, MANIFEST), manifest)
    return manifest


def read_manifest(run_dir) -> dict:
    path = os.path.join(run_dir, MANIFEST)
    if not os.path.isfile(path):
        raise MissingDataError(f"no {MANIFEST} in {str(run_dir)!r}; is this a run directory?")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
