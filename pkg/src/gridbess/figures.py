"""Report rendering: matplotlib figure files and a gnuplot script.

The run artifacts are CSV-first; figures are rendered from the in-memory
result to PNG alongside them, and plot.gp reproduces the same panels
from the CSVs for anyone without a Python stack.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_run_figures", "write_gnuplot_script"]


def render_run_figures(result, outdir, agent_ids=None) -> list:
    """Render the run-overview and event panels; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n = result.n_agents
    ids = list(agent_ids) if agent_ids else [f"bess{i+1}" for i in range(n)]
    t = result.t
    written = []

    fig, axes = plt.subplots(5, 1, figsize=(8, 11), sharex=True)
    ax = axes[0]
    ax.plot(t, result.load_total / 1e3, "k-", lw=1.2)
    ax.set_ylabel("load [kW]")
    ax.set_title(f"{result.spec_name}: run overview")

    ax = axes[1]
    for i in range(n):
        ax.plot(t, result.lam[:, i], lw=1.0, label=ids[i])
    ax.plot(t, result.lambda_star, "k--", lw=1.0, label="reference")
    ax.set_ylabel("power ratio")
    ax.legend(fontsize=7, ncol=3, loc="best")

    ax = axes[2]
    for i in range(n):
        ax.plot(t, 100.0 * result.soc[:, i], lw=1.0)
    ax.plot(t, 100.0 * result.soc_leader, "k--", lw=1.0)
    ax.set_ylabel("SoC [%]")

    ax = axes[3]
    for i in range(n):
        ax.plot(t, result.p_inj[:, i] / 1e3, lw=0.8)
        ax.plot(t, result.p_ref[:, i] / 1e3, ls="--", lw=0.8)
    ax.set_ylabel("BESS power [kW]")

    ax = axes[4]
    for i in range(n):
        ax.plot(t, result.omega_dev[:, i] / (2.0 * np.pi), lw=0.8)
    ax.plot(t, result.omega_syn / (2.0 * np.pi), "k--", lw=1.0)
    ax.set_ylabel("freq dev [Hz]")
    ax.set_xlabel("time [s]")
    for a in axes:
        a.grid(True, alpha=0.3)
    fig.tight_layout()
    p = outdir / "run_overview.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    if result.events:
        fig, axes = plt.subplots(n, 1, figsize=(8, 1.6 * n), sharex=True)
        axes = np.atleast_1d(axes)
        for i in range(n):
            times = [e.time for e in result.events if e.agent == i]
            ivals = [e.interval for e in result.events if e.agent == i]
            axes[i].vlines(times, 0, 1, color="tab:blue", lw=0.4, alpha=0.6)
            if times:
                axx = axes[i].twinx()
                axx.plot(times, np.asarray(ivals) * 1e3, "r.", ms=2)
                axx.set_ylabel("interval [ms]", fontsize=7, color="r")
            axes[i].set_ylabel(ids[i], fontsize=8)
            axes[i].set_yticks([])
        axes[-1].set_xlabel("time [s]")
        fig.suptitle("event instants and intervals")
        fig.tight_layout()
        p = outdir / "events.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    return written


_GP_TEMPLATE = """\
# gnuplot script for {name}; renders the same panels as run_overview.png
# usage: gnuplot plot.gp   (produces run_overview_gp.png)
set datafile separator ','
set terminal pngcairo size 900,1100
set output 'run_overview_gp.png'
set multiplot layout 5,1 title '{name}'
set grid
set key font ',7'
set ylabel 'load [kW]'
plot 'timeseries.csv' using 1:(column('load_total')/1e3) with lines lc 'black' notitle
set ylabel 'power ratio'
plot {lam_cols}, 'timeseries.csv' using 1:(column('lambda_star')) with lines dt 2 lc 'black' title 'ref'
set ylabel 'SoC [%]'
plot {soc_cols}, 'timeseries.csv' using 1:(100*column('soc_leader')) with lines dt 2 lc 'black' title 'leader'
set ylabel 'BESS power [kW]'
plot {pinj_cols}
set ylabel 'freq dev [Hz]'
set xlabel 'time [s]'
plot {omega_cols}, 'timeseries.csv' using 1:(column('omega_syn')/(2*pi)) with lines dt 2 lc 'black' title 'formula'
unset multiplot
"""


def write_gnuplot_script(outdir, name: str, agent_ids) -> Path:
    """Emit plot.gp referencing timeseries.csv next to it."""
    outdir = Path(outdir)

    def cols(fmt, scale=""):
        return ", ".join(
            f"'timeseries.csv' using 1:({scale}column('{fmt.format(a)}')) "
            f"with lines title '{a}'" for a in agent_ids)

    script = _GP_TEMPLATE.format(
        name=name,
        lam_cols=cols("lam_{}"),
        soc_cols=cols("soc_{}", scale="100*"),
        pinj_cols=cols("p_inj_{}", scale="(1/1e3)*"),
        omega_cols=cols("omega_dev_{}", scale="(1/(2*pi))*"),
    )
    p = outdir / "plot.gp"
    p.write_text(script)
    return p
