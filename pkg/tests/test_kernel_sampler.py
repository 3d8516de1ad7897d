import numpy as np

from stringgp.kernel_sampler import KernelSamplerConfig, run_kernel_sampler
from stringgp.experiments import f0


def toy_data(seed=0, n=40):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 1.0, n))
    y = np.sin(5.0 * x) + 0.1 * rng.standard_normal(n)
    return x[:, None], y


def test_runs_and_records_latent_draws():
    x, y = toy_data()
    x_test = np.linspace(0.1, 0.9, 5)[:, None]
    config = KernelSamplerConfig(iterations=120, burnin=60, thin=2, seed=0)
    chain = run_kernel_sampler(x, y, config, x_test=x_test)
    assert chain.f.shape == (30, 40)
    assert chain.f_star.shape == (30, 5)
    assert np.all(np.isfinite(chain.f_star))
    assert chain.n_trace.shape == (120, 1)


def test_deterministic_given_seed():
    x, y = toy_data()
    config = KernelSamplerConfig(iterations=60, burnin=30, seed=9)
    c1 = run_kernel_sampler(x, y, config)
    c2 = run_kernel_sampler(x, y, config)
    np.testing.assert_array_equal(c1.f, c2.f)


def test_posterior_mean_tracks_signal():
    x, y = toy_data(seed=3, n=50)
    config = KernelSamplerConfig(iterations=300, burnin=150, seed=1, allow_add=True)
    chain = run_kernel_sampler(x, y, config)
    post_mean = chain.f.mean(axis=0)
    truth = np.sin(5.0 * x[:, 0])
    corr = np.corrcoef(post_mean, truth)[0, 1]
    assert corr > 0.9


def test_regime_change_data_activates_boundaries():
    # localised frequency change: the boundary point process should spend
    # most of its time on at least one interior boundary
    t = 0.25 + np.arange(90) / 180.0
    y = f0(t)
    config = KernelSamplerConfig(
        iterations=400, burnin=200, seed=2, kernel_family="periodic", alpha=3.0, beta=1.0
    )
    chain = run_kernel_sampler(t[:, None], y, config)
    assert chain.n_trace[200:].mean() > 0.3
