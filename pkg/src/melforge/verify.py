"""Built-in analytic verification suites.

Every check compares an implementation path against an independent oracle:
closed forms for the schedule, Monte Carlo statistics for the forward
marginal, the exact Gaussian conditional score for the samplers, central
finite differences for gradients, and round trips for the DSP stack. A green
run is the documented prerequisite for trusting any training run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import dsp
from .degrade import band_limit, clip, mix_noise
from .diffusion import (
    DiffusionBatch,
    NoiseSchedule,
    forward_sample,
    gaussian_oracle,
    sample,
    score_matching_loss,
    score_target,
)
from .model import UNetConfig, build_score_net, tiny_config
from .train import model_backward, torch_loss


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def check_schedule_identities(sched: NoiseSchedule | None = None) -> Check:
    """rho^2 + sigma^2 = 1 to 1e-12 over 1000 t; endpoint closed forms."""
    sched = sched or NoiseSchedule()
    t = np.linspace(0.0, 1.0, 1000)
    gap = float(np.abs(sched.rho_coeff(t) ** 2 + sched.sigma(t) ** 2 - 1.0).max())
    sigma0 = float(sched.sigma(0.0))
    int_beta1 = sched.beta0 + 0.5 * sched.beta1
    sigma1_err = abs(float(sched.sigma(1.0)) ** 2 - (1.0 - np.exp(-int_beta1)))
    ok = gap < 1e-12 and sigma0 == 0.0 and sigma1_err < 1e-12
    return Check(
        "schedule-identities",
        ok,
        f"max|rho^2+sigma^2-1|={gap:.2e}, sigma(0)={sigma0}, sigma(1)^2 err={sigma1_err:.2e}",
    )


def check_forward_marginal(
    sched: NoiseSchedule | None = None, n: int = 10**5, seed: int = 0
) -> Check:
    """Monte Carlo mean/variance of x_t vs rho_t x0 and sigma_t^2, 2% relative.

    x0 is large enough that 2% of rho_t * x0 stays well above the Monte Carlo
    standard error of the mean even at t=0.9, where rho is small.
    """
    sched = sched or NoiseSchedule()
    rng = np.random.default_rng(seed)
    x0 = 50.0
    worst = 0.0
    details = []
    for t in (0.1, 0.5, 0.9):
        eps = rng.standard_normal(n)
        x_t = forward_sample(sched, np.full(n, x0), t, eps)
        want_mean = float(sched.rho_coeff(t)) * x0
        want_var = float(sched.sigma(t)) ** 2
        mean_err = abs(float(x_t.mean()) - want_mean) / max(abs(want_mean), 1e-12)
        var_err = abs(float(x_t.var()) - want_var) / want_var
        worst = max(worst, mean_err, var_err)
        details.append(f"t={t}: mean rel {mean_err:.4f}, var rel {var_err:.4f}")
    return Check("forward-marginal-mc", worst < 0.02, "; ".join(details))


def check_score_target_optimality(
    sched: NoiseSchedule | None = None, n: int = 10**4, seed: int = 0
) -> Check:
    """Loss at the exact target < 1e-12; zero-score loss = dimensionality (5%)."""
    sched = sched or NoiseSchedule()
    rng = np.random.default_rng(seed)
    dim = 16
    x0 = rng.standard_normal((n, dim))
    y = np.zeros_like(x0)
    t = rng.uniform(sched.t_min, 1.0, n)
    eps = rng.standard_normal((n, dim))
    batch = DiffusionBatch(x0, y, y, t, eps)

    eps_by_id = {i: eps[i] for i in range(n)}
    counter = iter(range(n))

    def exact_fn(x_t, t_i, y_i, mu_i):
        return score_target(sched, eps_by_id[next(counter)], t_i)

    exact_loss = score_matching_loss(sched, exact_fn, batch)
    zero_loss = score_matching_loss(sched, lambda x, t_, y_, m_: np.zeros_like(x), batch)
    dim_err = abs(zero_loss - dim) / dim
    ok = exact_loss < 1e-12 and dim_err < 0.05
    return Check(
        "score-target-optimality",
        ok,
        f"exact-target loss={exact_loss:.2e}, zero-score loss={zero_loss:.3f} vs dim {dim}",
    )


def check_gaussian_sampling(
    sched: NoiseSchedule | None = None,
    m: float = 1.5,
    s: float = 0.7,
    n: int = 10**4,
    seed: int = 0,
) -> Check:
    """25-step expint2 vs closed-form moments and a 1000-step Euler reference."""
    sched = sched or NoiseSchedule()
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    zeros = np.zeros(n)
    oracle = gaussian_oracle(sched, m, s)
    out = sample(sched, oracle, zeros, zeros, n_steps=25, solver="expint2", x_init=x1)
    mean_err = abs(float(out.mean()) - m)
    var_err = abs(float(out.var()) - s * s) / (s * s)
    euler_ref = sample(sched, oracle, zeros, zeros, n_steps=1000, solver="euler", x_init=x1)
    endpoint_gap = float(np.abs(out - euler_ref).max())
    coarse = sample(sched, oracle, zeros, zeros, n_steps=5, solver="expint2", x_init=x1)
    coarse_gap = float(np.abs(coarse - euler_ref).max())
    ok = (
        mean_err < 0.02 * abs(m) + 0.01
        and var_err < 0.05
        and endpoint_gap < 1e-2
        and endpoint_gap < coarse_gap
    )
    return Check(
        "gaussian-oracle-sampling",
        ok,
        f"mean err={mean_err:.4f}, var rel err={var_err:.4f}, "
        f"|expint2@25-euler@1000|={endpoint_gap:.4f} (5-step: {coarse_gap:.4f})",
    )


def gradient_check(
    config: UNetConfig | None = None,
    n_mels: int = 8,
    n_frames: int = 16,
    batch: int = 2,
    probes_per_tensor: int = 3,
    h: float = 1e-4,
    seed: int = 0,
) -> tuple[float, dict[str, float]]:
    """Central-difference check of every parameter tensor, double precision.

    The head is re-randomized after init (it is zero-initialized by design,
    which would make upstream gradients vanish identically and the check
    vacuous). Probes the largest-|gradient| entries of each tensor. Returns
    (worst relative error, per-tensor relative error).
    """
    config = config or tiny_config()
    model = build_score_net(config, seed).double()
    rng = np.random.default_rng([seed, 1])
    with torch.no_grad():
        model.head.weight.copy_(
            torch.from_numpy(rng.normal(0.0, 0.5, size=tuple(model.head.weight.shape)))
        )
        model.head.bias.copy_(
            torch.from_numpy(rng.normal(0.0, 0.5, size=tuple(model.head.bias.shape)))
        )
    sched = NoiseSchedule()
    x0 = torch.from_numpy(rng.standard_normal((batch, n_mels, n_frames)))
    y = torch.from_numpy(rng.standard_normal((batch, n_mels, n_frames)))
    mu = torch.from_numpy(rng.standard_normal((batch, n_mels, n_frames)))
    t = rng.uniform(sched.t_min, 1.0, batch)
    eps = torch.from_numpy(rng.standard_normal((batch, n_mels, n_frames)))

    _, grads = model_backward(model, sched, x0, y, mu, t, eps)

    def loss_at() -> float:
        with torch.no_grad():
            return float(torch_loss(model, sched, x0, y, mu, t, eps).item())

    per_tensor: dict[str, float] = {}
    for name, param in model.named_parameters():
        g = grads[name]
        flat = g.flatten()
        k = min(probes_per_tensor, flat.numel())
        idx = torch.topk(flat.abs(), k).indices
        worst = 0.0
        for i in idx.tolist():
            with torch.no_grad():
                flat_view = param.view(-1)
                old = float(flat_view[i].item())
                flat_view[i] = old + h
                up = loss_at()
                flat_view[i] = old - h
                down = loss_at()
                flat_view[i] = old
            fd = (up - down) / (2.0 * h)
            ad = float(flat[i].item())
            rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-6)
            worst = max(worst, rel)
        per_tensor[name] = worst
    return max(per_tensor.values()), per_tensor


def check_gradients(seed: int = 0) -> Check:
    worst, per_tensor = gradient_check(seed=seed)
    n_bad = sum(1 for v in per_tensor.values() if v >= 1e-4)
    return Check(
        "gradient-finite-difference",
        worst < 1e-4,
        f"worst rel err {worst:.2e} over {len(per_tensor)} tensors ({n_bad} failing)",
    )


def check_dsp_round_trips(seed: int = 0) -> Check:
    """STFT round trip, SNR mixer accuracy, clip idempotence, stopband depth."""
    rng = np.random.default_rng(seed)
    sr = 22050
    x = dsp.AudioBuffer(rng.standard_normal(sr) * 0.3, sr)
    recon = dsp.istft(dsp.stft(x, 1024, 256))
    rt_err = float(np.abs(recon.samples - x.samples).max())

    noise = dsp.AudioBuffer(rng.standard_normal(sr) * 0.2, sr)
    mixed = mix_noise(x, noise, 12.0)
    resid = mixed.samples - x.samples
    snr_measured = 10.0 * np.log10(np.mean(x.samples**2) / np.mean(resid**2))
    snr_err = abs(snr_measured - 12.0)

    clipped = clip(x, 0.1)
    idem = float(np.abs(clip(clipped, 0.1).samples - clipped.samples).max())

    wideband = dsp.AudioBuffer(rng.standard_normal(4 * sr), sr)
    limited = band_limit(wideband, 4000.0)
    from scipy.signal import welch

    freqs, pxx = welch(limited.samples, fs=sr, nperseg=2048)
    pass_mean = float(np.mean(pxx[(freqs > 200) & (freqs < 3200)]))
    stop_max = float(np.max(pxx[freqs > 5000]))
    stop_db = 10.0 * np.log10(pass_mean / stop_max)

    ok = rt_err < 1e-6 and snr_err < 0.1 and idem == 0.0 and stop_db >= 40.0
    return Check(
        "dsp-round-trips",
        ok,
        f"stft rt={rt_err:.2e}, snr err={snr_err:.4f} dB, clip idem={idem}, "
        f"stopband={stop_db:.1f} dB",
    )


def run_all(seed: int = 0) -> list[Check]:
    return [
        check_schedule_identities(),
        check_forward_marginal(seed=seed),
        check_score_target_optimality(seed=seed),
        check_gaussian_sampling(seed=seed),
        check_gradients(seed=seed),
        check_dsp_round_trips(seed=seed),
    ]
