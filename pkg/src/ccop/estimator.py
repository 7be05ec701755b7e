"""scikit-learn style facade over the solver and classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .classify import classify
from .model import Problem
from .stationarity import SolveConfig, check_m_stationarity, solve_all


class MStationaryAnalyzer(BaseEstimator):
    """Find and classify all M-stationary points of a problem.

    ``fit`` takes a :class:`~ccop.model.Problem` instead of a data matrix;
    ``predict`` answers the M-stationarity question for candidate points.

    Attributes
    ----------
    points_ : list of MStationaryPair
    classifications_ : list of Classification
    solve_stats_ : dict
    """

    def __init__(
        self,
        tol: float = 1e-8,
        tol_zero: float = 1e-8,
        tol_act: float = 1e-8,
        seeds_per_system: int = 64,
        max_newton_iters: int = 100,
        newton_tol: float = 1e-10,
        cluster_radius: float = 1e-6,
        rng_seed: int = 0,
        n_jobs: int = 1,
    ):
        self.tol = tol
        self.tol_zero = tol_zero
        self.tol_act = tol_act
        self.seeds_per_system = seeds_per_system
        self.max_newton_iters = max_newton_iters
        self.newton_tol = newton_tol
        self.cluster_radius = cluster_radius
        self.rng_seed = rng_seed
        self.n_jobs = n_jobs

    def _config(self) -> SolveConfig:
        return SolveConfig(
            seeds_per_system=self.seeds_per_system,
            max_newton_iters=self.max_newton_iters,
            newton_tol=self.newton_tol,
            cluster_radius=self.cluster_radius,
            rng_seed=self.rng_seed,
            n_jobs=self.n_jobs,
        )

    def fit(self, problem: Problem, y=None):
        if not isinstance(problem, Problem):
            raise TypeError("fit expects a Problem instance")
        result = solve_all(problem, self._config(), self.tol)
        self.problem_ = problem
        self.points_ = list(result)
        self.solve_stats_ = result.stats
        self.classifications_ = [classify(problem, pair, self.tol) for pair in self.points_]
        self.n_features_in_ = problem.n
        return self

    def predict(self, X) -> np.ndarray:
        """Boolean M-stationarity verdict for each row of ``X``."""
        check_is_fitted(self, "points_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return np.array(
            [
                bool(check_m_stationarity(self.problem_, x, self.tol, self.tol_zero, self.tol_act))
                for x in X
            ]
        )

    def stationary_points(self) -> np.ndarray:
        check_is_fitted(self, "points_")
        return np.array([pair.x for pair in self.points_]).reshape(-1, self.n_features_in_)
