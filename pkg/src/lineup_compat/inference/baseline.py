"""Ridge Gaussian baseline evaluated by leave-one-team-out cross-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE_GRID = np.logspace(-6, 4, 21)
SD_FLOOR = 1e-6


class SingularDesignError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RidgeModel:
    intercept: float
    coef: np.ndarray
    lam: float
    sd: float

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


def ridge_fit(X, y, lam: float) -> RidgeModel:
    """Ridge regression with an unpenalised intercept and homoscedastic sd."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("no training rows")
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    try:
        coef = np.linalg.solve(A, Xc.T @ (y - ym))
    except np.linalg.LinAlgError:
        raise SingularDesignError(f"ridge system singular at lambda={lam:g}") from None
    if not np.all(np.isfinite(coef)):
        raise SingularDesignError(f"ridge solution not finite at lambda={lam:g}")
    intercept = float(ym - xm @ coef)
    resid = y - intercept - X @ coef
    sd = max(float(np.sqrt(np.mean(resid**2))), SD_FLOOR)
    return RidgeModel(intercept, coef, float(lam), sd)


def _group_folds(groups, n_folds):
    """Assign whole groups to folds round-robin in sorted group order."""
    uniq = np.unique(groups)
    if uniq.size >= 2:
        k = min(n_folds, uniq.size)
        fold_of = {g: i % k for i, g in enumerate(uniq)}
        return np.array([fold_of[g] for g in groups]), k
    k = min(n_folds, groups.size)
    return np.arange(groups.size) % k, k


def select_lambda(X, y, groups, grid=RIDGE_GRID, n_folds: int = 5) -> float:
    """Ridge strength with the lowest inner-CV squared error (folds grouped by team)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds, k = _group_folds(np.asarray(groups), n_folds)
    if k < 2:
        return float(grid[0])
    err = np.zeros(len(grid))
    for f in range(k):
        tr, te = folds != f, folds == f
        for j, lam in enumerate(grid):
            m = ridge_fit(X[tr], y[tr], lam)
            err[j] += np.sum((y[te] - m.predict(X[te])) ** 2)
    return float(grid[int(np.argmin(err))])


@dataclass(frozen=True)
class FoldResult:
    team: int
    predictions: np.ndarray
    sd: float
    rmse: float
    mae: float
    nll: float
    lam: float


def gaussian_nll(y, mean, sd) -> float:
    z = (np.asarray(y) - mean) / sd
    return float(np.mean(0.5 * np.log(2 * np.pi * sd * sd) + 0.5 * z * z))


def baseline_fit_predict(X, y, team_index, fold_team: int) -> FoldResult:
    """Fit on every team except ``fold_team`` and score that team's rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    team_index = np.asarray(team_index)
    test = team_index == fold_team
    if not test.any():
        raise ValueError(f"team {fold_team} has no rows")
    train = ~test
    if not train.any():
        raise ValueError("no training teams left after holding one out")
    lam = select_lambda(X[train], y[train], team_index[train])
    model = ridge_fit(X[train], y[train], lam)
    pred = model.predict(X[test])
    r = y[test] - pred
    return FoldResult(int(fold_team), pred, model.sd, float(np.sqrt(np.mean(r**2))), float(np.mean(np.abs(r))),
                      gaussian_nll(y[test], pred, model.sd), lam)


@dataclass(frozen=True)
class CvResult:
    folds: tuple[FoldResult, ...]
    oof_predictions: np.ndarray

    def metrics(self) -> dict:
        """Fold-averaged rmse, mae and nll."""
        return {
            "rmse": float(np.mean([f.rmse for f in self.folds])),
            "mae": float(np.mean([f.mae for f in self.folds])),
            "nll": float(np.mean([f.nll for f in self.folds])),
            "n_folds": len(self.folds),
        }


def leave_one_team_out(X, y, team_index) -> CvResult:
    team_index = np.asarray(team_index)
    oof = np.empty(len(team_index))
    folds = []
    for t in np.unique(team_index):
        res = baseline_fit_predict(X, y, team_index, int(t))
        oof[team_index == t] = res.predictions
        folds.append(res)
    return CvResult(tuple(folds), oof)
