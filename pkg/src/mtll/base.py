"""Estimator plumbing shared by the causal filters."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_increments, check_positive


class CausalFilter(TransformerMixin, BaseEstimator):
    """Base class: ``transform(dy)`` returns the estimate path ``xhat(t_0..t_N)``.

    Subclasses implement a batched streaming interface so that many
    observation records can be filtered side by side:

    * ``_batch_init(n_rows)`` returns a state object,
    * ``_batch_advance(state, dys, i0)`` consumes increments ``dys`` of shape
      ``(C, n_rows)`` starting at step ``i0`` and returns the estimates at the
      ``C`` following nodes,
    * ``_batch_take(state, keep)`` drops rows where ``keep`` is False,
    * ``_batch_current(state)`` is the estimate at the last node processed.

    Estimates at node ``i`` depend only on increments ``0..i-1``.
    """

    def fit(self, X=None, y=None):
        check_positive(self.dt, "dt")
        if X is not None:
            check_increments(X)
        self._setup()
        self.is_fitted_ = True
        return self

    def _setup(self):
        pass

    def transform(self, X):
        check_is_fitted(self, "is_fitted_")
        dy = check_increments(X)
        state = self._batch_init(1)
        est = self._batch_advance(state, dy[:, None], 0)[:, 0]
        return np.concatenate(([self._initial_estimate()], est))

    def stream(self):
        """Causal estimate stream usable with ``simulate_error_pair``."""
        check_is_fitted(self, "is_fitted_")
        state = self._batch_init(1)
        done = [0]

        def xhat_fn(i, view):
            while done[0] < i:
                k = done[0]
                self._batch_advance(state, np.array([[view[k]]]), k)
                done[0] += 1
            return float(self._batch_current(state)[0])

        return xhat_fn

    def _initial_estimate(self):
        return float(self.x0)
