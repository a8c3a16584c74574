"""A small version of the latent-ratio benchmark.

As the share of latent surrogates grows, regressing y on the observed
short-term outcomes stops identifying the effect; LASER keeps working.
Three seeds keep the run short. The full protocol (ten seeds, every method)
is configs/ratio_sweep.ini with the CLI ``benchmark`` command.
"""

# %%
from laser.evaluation import SweepSpec, run_sweep

spec = SweepSpec(axis="ratio", values=(0.0, 0.6, 1.0), seeds=(0, 2, 3), methods=("laser", "sind-linear", "bd-linear"))


def show(cell):
    parts = ", ".join("%s %.3f" % (m, r["mape"]) for m, r in cell["results"].items() if r["status"] == "ok")
    print("r=%.1f seed=%d: %s" % (cell["value"], cell["seed"], parts))


table = run_sweep(spec, progress=show)

# %%
print()
print(table.format())
