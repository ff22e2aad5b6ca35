"""Summaries of a finished run directory.

Writes ``table.txt`` (activity and trigger statistics per chain and pooled),
``consensus_error.csv`` (chain-averaged consensus error per tick, with the
theoretical envelope when constants are available) and
``accuracy_vs_updates.csv`` (accuracy keyed by per-agent update count).
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from gossip_langevin.harness import artifacts as art


def _table(title: str, rows: list[dict]) -> str:
    lines = [title, f"{'agent':>6} {'gos':>10} {'%gos':>8} {'ET':>10} {'%ET':>8}"]
    for r in rows:
        flag = " *" if r.get("never_active") else ""
        lines.append(
            f"{r['agent']:>6} {r['gos']:>10.1f} {100 * r['pct_gos']:>7.2f}% {r['et']:>10.1f} {100 * r['pct_et']:>7.2f}%{flag}"
        )
    return "\n".join(lines)


def comm_tables(comm_rows: list[dict]) -> str:
    by_engine: dict[str, list[dict]] = defaultdict(list)
    for r in comm_rows:
        by_engine[r["engine"]].append(
            {
                "engine": r["engine"],
                "chain": int(r["chain"]),
                "agent": int(r["agent"]),
                "gos": float(r["gos"]),
                "pct_gos": float(r["pct_gos"]),
                "et": float(r["et"]),
                "pct_et": float(r["pct_et"]),
                "never_active": bool(int(r["never_active"])),
            }
        )
    blocks = []
    for engine, rows in by_engine.items():
        chains = sorted({r["chain"] for r in rows})
        for c in chains:
            blocks.append(_table(f"[{engine}] chain {c}", [r for r in rows if r["chain"] == c]))
        agents = sorted({r["agent"] for r in rows})
        pooled = []
        for a in agents:
            sel = [r for r in rows if r["agent"] == a]
            pooled.append(
                {
                    "agent": a,
                    **{k: float(np.mean([r[k] for r in sel])) for k in ("gos", "pct_gos", "et", "pct_et")},
                    "never_active": all(r["never_active"] for r in sel),
                }
            )
        blocks.append(_table(f"[{engine}] pooled over {len(chains)} chain(s)", pooled))
    return "\n\n".join(blocks) + "\n"


def _consensus_rows(metrics: list[dict], theory: dict | None):
    series: dict[tuple[str, int], list[float]] = defaultdict(list)
    for r in metrics:
        if r["metric"] == "consensus_error":
            series[(r["engine"], int(r["tick"]))].append(float(r["value"]))
    for (engine, tick), vals in sorted(series.items()):
        env = ""
        if theory is not None and engine == "gossip_et":
            k = max(tick - 1, 0)
            s = math.sqrt(theory["lam"])
            env = repr(theory["Y1"] * s ** (k + 1) + theory["Y2"] / (k + 1) ** theory["delta_e"] + theory["Y3"])
        yield [engine, tick, len(vals), repr(float(np.mean(vals))), repr(min(vals)), repr(max(vals)), env]


def report(run_dir) -> dict:
    """Regenerate the summary tables and plot CSVs of ``run_dir``."""
    run_dir = Path(run_dir)
    manifest = art.read_manifest(run_dir)
    out = {"status": manifest["status"], "files": []}
    comm_path = run_dir / "comm_stats.csv"
    text = f"run status: {manifest['status']}\n\n"
    if comm_path.exists():
        text += comm_tables(art.read_csv(comm_path))
    (run_dir / "table.txt").write_text(text, encoding="utf-8")
    out["files"].append("table.txt")
    out["text"] = text

    theory = None
    tpath = run_dir / "theory_constants.json"
    if tpath.exists():
        theory = json.loads(tpath.read_text(encoding="utf-8"))
    mpath = run_dir / "metrics.csv"
    if mpath.exists():
        art.write_csv(
            run_dir / "consensus_error.csv",
            ["engine", "tick", "chains", "mean", "min", "max", "envelope"],
            _consensus_rows(art.read_csv(mpath), theory),
        )
        out["files"].append("consensus_error.csv")

    apath = run_dir / "accuracy.csv"
    if apath.exists():
        rows = art.read_csv(apath)
        rows.sort(key=lambda r: (r["engine"], int(r["agent"]), float(r["updates"])))
        art.write_csv(
            run_dir / "accuracy_vs_updates.csv",
            ["engine", "agent", "updates", "accuracy"],
            ([r["engine"], r["agent"], r["updates"], r["accuracy"]] for r in rows),
        )
        out["files"].append("accuracy_vs_updates.csv")
    return out
