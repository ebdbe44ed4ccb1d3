import csv
import math

import numpy as np
import pytest

from kernelfactors.montecarlo import FactorDgpSpec, make_rng, simulate_factor_model

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def levels_for_tcode(stationary: np.ndarray, code: int) -> np.ndarray:
    """Invert a transformation code so that transforming returns ``stationary``.

    Leading entries that the code discards are filled with harmless seeds.
    """
    s = np.asarray(stationary, dtype=float)
    if code == 1:
        return s
    if code == 2:
        return np.cumsum(s)
    if code == 3:
        return np.cumsum(np.cumsum(s))
    if code == 4:
        return np.exp(s)
    if code == 5:
        return np.exp(np.cumsum(0.01 * s))
    if code == 6:
        return np.exp(np.cumsum(np.cumsum(0.001 * s)))
    if code == 7:
        # growth rates g_t with x_t = x_{t-1} (1 + g_t); differencing g recovers s
        g = 0.01 + np.cumsum(0.001 * s)
        return 100.0 * np.cumprod(1.0 + g)
    raise ValueError(code)


def write_fred_md(path, names, tcodes, levels, start="1959-01"):
    """Write a FRED-MD style CSV (header, transform row, M/D/YYYY dates)."""
    T = levels.shape[0]
    months = np.datetime64(start, "M") + np.arange(T)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sasdate", *names])
        w.writerow(["Transform:", *[str(c) for c in tcodes]])
        for m, row in zip(months, levels):
            y, mo = str(m).split("-")
            w.writerow([f"{int(mo)}/1/{y}", *["" if math.isnan(v) else repr(float(v)) for v in row]])
    return path


TARGETS = ("RPI", "CE16OV", "HOUST", "DPCERA3M086SBEA", "M1SL", "FEDFUNDS", "CPIAUCSL", "S&P 500")


def synthetic_fred_md(path, T=200, n_other=22, seed=0, start="1959-01", missing_column=True):
    """Factor-driven panel written as FRED-MD levels with mixed tcodes.

    Returns ``(path, names, tcodes)``. The eight default target names are
    included; one extra column has a gap so it gets dropped.
    """
    names = list(TARGETS) + [f"X{j:03d}" for j in range(n_other)]
    N = len(names)
    spec = FactorDgpSpec(T, N, 3, seed=seed, noise_scale=0.5)
    X, _ = simulate_factor_model(spec)
    rng = make_rng([seed, 99])
    cycle = (1, 2, 5, 4, 6, 7, 3)
    tcodes = [cycle[j % len(cycle)] for j in range(N)]
    levels = np.column_stack([levels_for_tcode(X[:, j], c) for j, c in enumerate(tcodes)])
    if missing_column:
        names.append("GAPPY")
        tcodes.append(1)
        col = rng.standard_normal(T)
        col[T // 2] = np.nan
        levels = np.column_stack([levels, col])
    write_fred_md(path, names, tcodes, levels, start)
    return path, names, tcodes


@pytest.fixture
def fred_csv(tmp_path):
    path, _, _ = synthetic_fred_md(tmp_path / "panel.csv")
    return path
