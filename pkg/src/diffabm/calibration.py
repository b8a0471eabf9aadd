"""Loss functions tying the simulators to observed data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abm.brock_hommes import TRUE_THETA, BHAux, bh_simulate
from .abm.epidemic import EpiConfig, EpiParams, epi_simulate
from .abm.population import Population
from .ad import ops
from .ad.rng import RngStream
from .objective import GaussianKernel, log10_sse, median_heuristic, mmd2


def bh_ground_truth(aux: BHAux = BHAux(), seed: int = 0, theta=TRUE_THETA) -> np.ndarray:
    """Synthetic observed prices at ``theta`` (default: the calibration target)."""
    noise = RngStream(seed).spawn("ground-truth").normal(aux.T)
    return bh_simulate(np.asarray(theta, dtype=float), noise, aux).prices


@dataclass
class BHLoss:
    """MMD^2 between a simulated price series and the observed one.

    The kernel bandwidth defaults to the median heuristic on the observed data
    and stays fixed afterwards.
    """

    y: np.ndarray
    aux: BHAux = BHAux()
    kernel: GaussianKernel | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.kernel is None:
            self.kernel = GaussianKernel(median_heuristic(self.y))

    def simulate(self, theta, rng: RngStream, horizon=None):
        noise = rng.normal(self.aux.T)
        return bh_simulate(theta, noise, self.aux, horizon).prices

    def __call__(self, theta, rng: RngStream, horizon=None):
        return mmd2(self.simulate(theta, rng, horizon), self.y, self.kernel)


def epi_transform(z):
    """Map an unconstrained 11-vector to (betas, initial infected fraction).

    Contact intensities go through softplus; log10 of the initial fraction is
    squashed into (-5, -2) by a sigmoid.
    """
    betas = ops.softplus(z[:10])
    log10_i0 = -5.0 + 3.0 * ops.sigmoid(z[10])
    return betas, ops.exp(log10_i0 * np.log(10.0))


def epi_inverse_transform(betas, i0_fraction) -> np.ndarray:
    b = np.asarray(betas, dtype=float)
    u = (np.log10(i0_fraction) + 5.0) / 3.0
    return np.r_[b + np.log(-np.expm1(-b)), np.log(u) - np.log1p(-u)]


@dataclass
class EpiLoss:
    """Squared error between log10 daily infections, simulated vs observed.

    ``theta`` is unconstrained (see ``epi_transform``). The horizon argument is
    accepted for interface compatibility and ignored.
    """

    y: np.ndarray
    population: Population
    config: EpiConfig = EpiConfig()
    group_config: dict | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != (self.config.days,):
            raise ValueError(f"observed series must have {self.config.days} days")

    def simulate(self, theta, rng: RngStream):
        betas, i0 = epi_transform(theta)
        return epi_simulate(betas, i0, self.population, rng, self.config, self.group_config)

    def __call__(self, theta, rng: RngStream, horizon=None):
        return log10_sse(self.simulate(theta, rng).daily, self.y)


def epi_ground_truth(population: Population, config: EpiConfig = EpiConfig(), seed: int = 0,
                     params: EpiParams | None = None, group_config: dict | None = None):
    """Simulated ground truth ``EpiState`` at ``params`` (default: the calibration target)."""
    params = params or EpiParams.ground_truth()
    rng = RngStream(seed).spawn("ground-truth")
    return epi_simulate(np.asarray(params.betas), params.i0_fraction, population, rng, config, group_config)
