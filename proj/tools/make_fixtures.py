"""Regenerate the synthetic panels in data/ (deterministic)."""

import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"
UNITS = [f"U{k:02d}" for k in range(1, 11)]
TIMES = list(range(2000, 2014))
LAST_PRE = 2009


def latent_rates(rng, outcomes):
    n, t = len(UNITS), len(TIMES)
    s = np.linspace(0.0, 1.0, t)
    factors = np.stack([np.sin(2.0 * s + 0.3), np.cos(3.0 * s)])
    rates = {}
    for o, base in outcomes.items():
        loadings = rng.normal(0.0, 0.15, size=(n, 2))
        level = np.log(base) + rng.normal(0.0, 0.25, size=n)
        rates[o] = np.exp(level[:, None] + loadings @ factors + 0.05 * s[None, :])
    return rates


def write(name, rows, header):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    (OUT / name).write_text("\n".join(lines) + "\n")


def main():
    rng = np.random.default_rng(20240607)
    pop = np.round(rng.uniform(1e6, 6e6, size=len(UNITS)))
    growth = 1.0 + 0.01 * np.arange(len(TIMES))

    rates = latent_rates(rng, {"gun": 4.0, "non_gun": 2.0})
    effect = {"gun": -1.0, "non_gun": 0.0}
    rows = []
    for i, u in enumerate(UNITS):
        for k, t in enumerate(TIMES):
            n = int(pop[i] * growth[k])
            for o in rates:
                r = rates[o][i, k]
                if i == 0 and t > LAST_PRE:
                    r = max(r + effect[o], 0.05)
                rows.append((u, t, o, rng.poisson(r * n / 1e5), n))
    write("panel_counts.csv", rows, ["unit", "time", "outcome", "value", "population"])

    null = latent_rates(rng, {"homicide": 5.0})["homicide"]
    rows = []
    for i, u in enumerate(UNITS):
        for k, t in enumerate(TIMES):
            n = int(pop[i] * growth[k])
            rows.append((u, t, "homicide", rng.poisson(null[i, k] * n / 1e5), n))
    write("panel_null.csv", rows, ["unit", "time", "outcome", "value", "population"])

    rows = []
    for i, u in enumerate(UNITS):
        for k, t in enumerate(TIMES):
            n = int(pop[i] * growth[k])
            r = null[i, k] + rng.normal(0.0, 0.2) + (-0.8 if i == 0 and t > LAST_PRE else 0.0)
            rows.append((u, t, "homicide", f"{r:.4f}", n))
    write("panel_rates.csv", rows, ["unit", "time", "outcome", "value", "population"])


if __name__ == "__main__":
    main()
