"""End-to-end protocol runner, analytic sweeps, and figure datasets.

One run executes: source bits/bases -> intensity draw -> channel -> attack ->
loss and detection (with dark counts) -> one weak measurement per signal
(observable chosen uniformly) -> strong Z measurement -> sifting -> the
estimation subroutine -> key-rate evaluation.  Everything is deterministic
given the master seed: every random stage draws from its own Philox stream
keyed by (master_seed, stage tag) and partitioned into fixed 2^16-signal
counter blocks, so workers that own whole blocks reproduce the serial run
bit for bit.

The analytic mode bypasses sampling: conditioned cell statistics are computed
in closed form (for an honest device the reading in any cell is the two-branch
mixture with marginal branch probability E = mean expectation value, hence
mean g E and variance sigma^2 + g^2 E(1-E) regardless of angle noise, biasing
or ensemble mixing, because the branch probability is linear in the state).
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import adversary as adv
from .bloch import ChannelModel, apply_channel, bb84_state, binary_entropy
from .estimation import (
    INTENSITY_DECOY,
    INTENSITY_SIGNAL,
    INTENSITY_VACUUM,
    NO_CLICK,
    EstimationReport,
    EstimationThresholds,
    SignalLog,
    build_report,
    exact_stats,
    report_from_stats,
)
from .keyrate import (
    DecoyConfig,
    SystemParams,
    bb84_decoy_chain,
    q1_lower,
    wm_decoy_chain,
    wm_decoy_rate,
)
from .pointer import PointerConfig, measure_array, wm_disturbance_error

BLOCK_SIZE = 1 << 16


# ---------------------------------------------------------------------------
# deterministic stage streams
# ---------------------------------------------------------------------------

def _stage_tag(stage: str) -> int:
    return int.from_bytes(hashlib.blake2b(stage.encode(), digest_size=8).digest(), "little")


def stage_block_generator(master_seed: int, stage: str, block: int) -> np.random.Generator:
    """Philox stream for one (stage, block); blocks own disjoint counter ranges."""
    key = (master_seed & (2**64 - 1), _stage_tag(stage))
    bit_gen = np.random.Philox(key=key, counter=[0, 0, block, 0])
    return np.random.Generator(bit_gen)


def stage_blocks(master_seed: int, stage: str, n: int):
    """Yield (lo, hi, generator) covering range(n) in fixed-size blocks."""
    for block, lo in enumerate(range(0, n, BLOCK_SIZE)):
        yield lo, min(lo + BLOCK_SIZE, n), stage_block_generator(master_seed, stage, block)


def stage_uniform(master_seed: int, stage: str, n: int) -> np.ndarray:
    out = np.empty(n)
    for lo, hi, gen in stage_blocks(master_seed, stage, n):
        out[lo:hi] = gen.random(hi - lo)
    return out


def stage_bits(master_seed: int, stage: str, n: int) -> np.ndarray:
    return (stage_uniform(master_seed, stage, n) < 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# configuration and result records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    """Everything one protocol run needs; immutable and hashable."""

    n_signals: int = 2_000_000
    master_seed: int = 20170109
    pointer: PointerConfig = field(default_factory=lambda: PointerConfig(g=0.05, sigma_md=1.0))
    channel: ChannelModel = field(default_factory=ChannelModel)
    attack: adv.AttackConfig = field(default_factory=adv.AttackConfig)
    system: SystemParams = field(default_factory=lambda: SystemParams(eta_d=1.0, distance_km=0.0))
    decoy: DecoyConfig = field(default_factory=DecoyConfig)
    intensity_probs: tuple = (0.7, 0.2, 0.1)
    thresholds: EstimationThresholds | None = None

    def __post_init__(self):
        if self.n_signals < 1:
            raise ValueError("n_signals must be >= 1")
        if len(self.intensity_probs) != 3 or any(p < 0 for p in self.intensity_probs):
            raise ValueError("intensity_probs must be three nonnegative numbers")
        if abs(sum(self.intensity_probs) - 1.0) > 1e-9:
            raise ValueError(f"intensity_probs must sum to 1, got {self.intensity_probs}")

    def resolved_thresholds(self) -> EstimationThresholds:
        if self.thresholds is not None:
            return self.thresholds
        return EstimationThresholds.for_device(self.pointer.g, self.pointer.sigma_md)


@dataclass
class RunResult:
    """Outcome of one protocol run plus ground-truth oracle comparisons."""

    report: EstimationReport
    abort: bool
    qber: float
    sifted_key_length: int
    ground_truth_sifted_error: float
    eve_sifted_knowledge: float | None
    key_rate: float
    idealized_rate_smoothed: float
    undetected_attack: bool
    timings: dict
    log: SignalLog | None = None


# ---------------------------------------------------------------------------
# the protocol
# ---------------------------------------------------------------------------

def _draw_intensities(master_seed: int, n: int, probs) -> np.ndarray:
    u = stage_uniform(master_seed, "intensity", n)
    edges = np.cumsum(probs)
    out = np.full(n, INTENSITY_VACUUM, dtype=np.uint8)
    out[u < edges[1]] = INTENSITY_DECOY
    out[u < edges[0]] = INTENSITY_SIGNAL
    return out


def _source_bloch(s_a: np.ndarray, b: np.ndarray) -> np.ndarray:
    r = np.zeros((len(s_a), 3))
    sign = np.where(s_a == 0, 1.0, -1.0)
    z_mask = b == 0
    r[z_mask, 2] = sign[z_mask]
    r[~z_mask, 0] = sign[~z_mask]
    return r


def _bob_bias_angles(h: np.ndarray, attack: adv.AttackConfig, master_seed: int) -> np.ndarray:
    """Adversarial rotation of the measured projector, selective per Eve's guess."""
    n = len(h)
    if attack.strategy != "biased_observables":
        return np.zeros(n)
    guess_right = stage_uniform(master_seed, "eve_observable_guess", n) < attack.p_h
    intended = np.where(h == 0, attack.phi, attack.phi_prime)
    swapped = np.where(h == 0, attack.phi_prime, attack.phi)
    return np.where(guess_right, intended, swapped)


def run_protocol(cfg: ProtocolConfig, keep_log: bool = False) -> RunResult:
    """Execute the protocol once; deterministic in cfg.master_seed."""
    timings = {}
    tick = time.perf_counter()
    n = cfg.n_signals
    seed = cfg.master_seed
    thresholds = cfg.resolved_thresholds()
    attack = cfg.attack.with_device_defaults(cfg.pointer.g, cfg.pointer.sigma_md)

    # Alice
    s_a = stage_bits(seed, "alice_bits", n)
    b = stage_bits(seed, "alice_basis", n)
    intensity = _draw_intensities(seed, n, cfg.intensity_probs)
    r = _source_bloch(s_a, b)
    timings["source"] = time.perf_counter() - tick; tick = time.perf_counter()

    # channel
    rx, ry, rz = cfg.channel.apply_array(r[:, 0], r[:, 1], r[:, 2])
    r = np.stack([rx, ry, rz], axis=-1)
    timings["channel"] = time.perf_counter() - tick; tick = time.perf_counter()

    # Eve on the channel
    eve_bits = None
    if attack.strategy in ("intercept_resend", "fake_wm_strategy1", "fake_wm_strategy2"):
        force_z = attack.strategy == "fake_wm_strategy1"
        out = np.empty_like(r)
        eve_bits = np.empty(n, dtype=np.uint8)
        for lo, hi, gen in stage_blocks(seed, "eve_channel", n):
            out[lo:hi], _, eve_bits[lo:hi] = adv.intercept_resend_array(
                r[lo:hi], b[lo:hi], attack.p_basis, gen, force_z=force_z)
        r = out
    timings["attack"] = time.perf_counter() - tick; tick = time.perf_counter()

    # loss, detection and dark counts; intensity only gates detection since
    # multi-photon pulses are accounted analytically by the decoy bounds
    gamma = np.choose(intensity, [cfg.decoy.mu, cfg.decoy.nu, 0.0])
    p_photon = -np.expm1(-cfg.system.eta * gamma)
    u = stage_uniform(seed, "detection", n)
    photon_click = u < p_photon
    dark_click = (~photon_click) & (u < p_photon + cfg.system.y0)
    clicked = photon_click | dark_click
    timings["detection"] = time.perf_counter() - tick; tick = time.perf_counter()

    # Bob: one weak measurement per signal, then a strong Z measurement
    h = stage_bits(seed, "bob_observable", n)
    sign = np.where(h == 0, 1.0, -1.0)
    angle = math.pi / 4 + _bob_bias_angles(h, attack, seed)
    omega = np.zeros(n)
    posterior = r.copy()
    for lo, hi, gen in stage_blocks(seed, "bob_wm", n):
        omega[lo:hi], posterior[lo:hi] = measure_array(
            r[lo:hi], sign[lo:hi], angle[lo:hi], cfg.pointer, gen)
    u_strong = stage_uniform(seed, "bob_strong", n)
    s_b = np.where(u_strong < 0.5 * (1.0 - posterior[:, 2]), 1, 0).astype(np.int8)

    # dark windows carry a photonless pointer record centered at 0 and a coin-flip bit
    dark_omega = np.zeros(n)
    for lo, hi, gen in stage_blocks(seed, "dark_pointer", n):
        dark_omega[lo:hi] = gen.normal(0.0, cfg.pointer.sigma_md, hi - lo)
    omega = np.where(dark_click, dark_omega, omega)
    s_b = np.where(dark_click, (stage_uniform(seed, "dark_bit", n) < 0.5).astype(np.int8), s_b)

    if attack.strategy in ("fake_wm_strategy1", "fake_wm_strategy2"):
        # Eve's agent overwrites the device output for every detection window
        fake = np.empty(n)
        for lo, hi, gen in stage_blocks(seed, "eve_fakes", n):
            fake[lo:hi] = adv.sample_strategy_fakes(
                s_a[lo:hi], b[lo:hi], h[lo:hi], attack,
                cfg.pointer.g, cfg.pointer.sigma_md, gen)
        omega = fake
    s_b = np.where(clicked, s_b, NO_CLICK).astype(np.int8)
    timings["measurement"] = time.perf_counter() - tick; tick = time.perf_counter()

    log = SignalLog(s_a, b, h, omega, s_b, intensity)
    report = build_report(log, thresholds)
    timings["estimation"] = time.perf_counter() - tick; tick = time.perf_counter()

    # ground truth from the oracle's side of the fence
    sift = clicked & (b == 0)
    key_len = int(sift.sum())
    gt_error = float((s_a[sift] != s_b[sift]).mean()) if key_len else 0.0
    eve_known = None
    if eve_bits is not None and key_len:
        eve_known = float((eve_bits[sift] == s_b[sift]).mean())

    abort = report.abort
    key_rate = 0.0
    if not abort:
        key_rate = _estimated_key_rate(report, cfg)
    ideal = max(1.0 - 2.0 * binary_entropy(min(max(report.qber, 0.0), 0.5)), 0.0)
    undetected = (attack.strategy != "none") and not abort and (eve_known or 0.0) > 0.99
    timings["rates"] = time.perf_counter() - tick

    return RunResult(
        report=report, abort=abort, qber=report.qber,
        sifted_key_length=key_len, ground_truth_sifted_error=gt_error,
        eve_sifted_knowledge=eve_known, key_rate=key_rate,
        idealized_rate_smoothed=0.0 if abort else ideal,
        undetected_attack=undetected, timings=timings,
        log=log if keep_log else None,
    )


def _estimated_key_rate(report: EstimationReport, cfg: ProtocolConfig) -> float:
    """Decoy rate evaluated on the run's estimated gains and error rates."""
    gains = report.gains
    q_mu, q_nu, q_vac = gains.get("signal", 0.0), gains.get("decoy", 0.0), gains.get("vacuum", 0.0)
    clip = lambda x: min(max(x, 0.0), 0.5)
    if q_nu <= 0.0 or q_mu <= 0.0:
        # no decoy data: fall back to the idealized rate at the estimated QBER
        return max(1.0 - 2.0 * binary_entropy(clip(report.qber)), 0.0)
    try:
        q1 = q1_lower(q_mu, q_nu, q_vac, cfg.decoy)
    except ValueError:
        return 0.0
    if q1 <= 0.0:
        return 0.0
    dz_mu = clip(report.delta_z_corrected + (1.0 - report.dark_fraction_signal) * report.delta_wm_estimate)
    dx_nu = report.delta_x_decoy_corrected
    if dx_nu is None:
        dx_nu = report.delta_x_corrected
    dx_nu = clip(dx_nu + (1.0 - report.dark_fraction_decoy) * report.delta_wm_estimate)
    return wm_decoy_rate(q1, q_mu, dz_mu, dx_nu, 0.5, q_nu, q_vac, cfg.system, cfg.decoy)


def channel_estimation_log(channel: ChannelModel, pointer: PointerConfig,
                           n: int, master_seed: int) -> SignalLog:
    """Loss-free estimation bench: weak-measure n signals through a channel.

    Every signal clicks, all pulses are signal intensity; this isolates the
    estimation statistics from the detection model.
    """
    s_a = stage_bits(master_seed, "alice_bits", n)
    b = stage_bits(master_seed, "alice_basis", n)
    h = stage_bits(master_seed, "bob_observable", n)
    r = _source_bloch(s_a, b)
    rx, ry, rz = channel.apply_array(r[:, 0], r[:, 1], r[:, 2])
    r = np.stack([rx, ry, rz], axis=-1)
    sign = np.where(h == 0, 1.0, -1.0)
    angle = np.full(n, math.pi / 4)
    omega = np.empty(n)
    posterior = np.empty_like(r)
    for lo, hi, gen in stage_blocks(master_seed, "bob_wm", n):
        omega[lo:hi], posterior[lo:hi] = measure_array(
            r[lo:hi], sign[lo:hi], angle[lo:hi], pointer, gen)
    u_strong = stage_uniform(master_seed, "bob_strong", n)
    s_b = np.where(u_strong < 0.5 * (1.0 - posterior[:, 2]), 1, 0).astype(np.int8)
    intensity = np.full(n, INTENSITY_SIGNAL, dtype=np.uint8)
    return SignalLog(s_a, b, h, omega, s_b, intensity)


# ---------------------------------------------------------------------------
# analytic (exact-expectation) mode
# ---------------------------------------------------------------------------

def _honest_cell_expectations(cfg: ProtocolConfig, attack: adv.AttackConfig) -> np.ndarray:
    """Marginal shifted-branch probability E per (bit, basis, observable) cell."""
    expectations = np.empty((2, 2, 2))
    damp = math.exp(-0.5 * cfg.pointer.sigma_phi**2)  # Gaussian angle noise damps exactly
    for s_a in (0, 1):
        for basis_flag, basis in enumerate("ZX"):
            state = apply_channel(cfg.channel, bb84_state(basis, s_a))
            r_vec = state.as_array()
            if attack.strategy == "intercept_resend":
                r_vec = adv.intercept_resend_mean_state(r_vec, basis_flag, attack.p_basis)
            for h_flag, fam in enumerate((+1.0, -1.0)):
                if attack.strategy == "biased_observables":
                    intended = attack.phi if h_flag == 0 else attack.phi_prime
                    swapped = attack.phi_prime if h_flag == 0 else attack.phi
                    biases = (attack.p_h, intended), (1.0 - attack.p_h, swapped)
                else:
                    biases = ((1.0, 0.0),)
                e = 0.0
                for weight, bias in biases:
                    a = math.pi / 4 + cfg.pointer.bias_phi + bias
                    e += weight * 0.5 * (
                        1.0 + damp * (fam * math.sin(a) * r_vec[0] + math.cos(a) * r_vec[2]))
                expectations[s_a, basis_flag, h_flag] = e
    return expectations


def exact_cell_statistics(cfg: ProtocolConfig):
    """Exact (mean, variance) of the conditioned readings under the configured attack."""
    attack = cfg.attack.with_device_defaults(cfg.pointer.g, cfg.pointer.sigma_md)
    g, sig = cfg.pointer.g, cfg.pointer.sigma_md
    if attack.strategy in ("fake_wm_strategy1", "fake_wm_strategy2"):
        return adv.strategy_fake_cell_laws(attack, g, sig)
    e = _honest_cell_expectations(cfg, attack)
    return g * e, sig**2 + g**2 * e * (1.0 - e)


def analytic_report(cfg: ProtocolConfig) -> EstimationReport:
    """The estimation subroutine fed with exact expectations (no sampling)."""
    mean, var = exact_cell_statistics(cfg)
    q_mu = cfg.system.y0 - math.expm1(-cfg.system.eta * cfg.decoy.mu)
    q_nu = cfg.system.y0 - math.expm1(-cfg.system.eta * cfg.decoy.nu)
    gains = {"signal": q_mu, "decoy": q_nu, "vacuum": cfg.system.y0}
    d_mu = gains["vacuum"] / q_mu
    d_nu = gains["vacuum"] / q_nu
    stats = exact_stats((1.0 - d_mu) * mean, var)
    stats_nu = exact_stats((1.0 - d_nu) * mean, var)
    return report_from_stats(stats, cfg.resolved_thresholds(), gains, stats_decoy=stats_nu)


# ---------------------------------------------------------------------------
# sweeps and figure datasets
# ---------------------------------------------------------------------------

_AXIS_HELP = "dotted config path, e.g. pointer.g_over_sigma, channel.depolarizing_prob, attack.phi"


def set_config_axis(cfg: ProtocolConfig, axis: str, value) -> ProtocolConfig:
    """Return cfg with the dotted `axis` field replaced by `value`."""
    parts = axis.split(".")
    if axis == "pointer.g_over_sigma":
        return replace(cfg, pointer=replace(cfg.pointer, g=value * cfg.pointer.sigma_md))
    if len(parts) == 1:
        if not hasattr(cfg, parts[0]):
            raise ValueError(f"unknown axis {axis!r} ({_AXIS_HELP})")
        return replace(cfg, **{parts[0]: value})
    if len(parts) == 2:
        section, fieldname = parts
        if not hasattr(cfg, section):
            raise ValueError(f"unknown axis {axis!r} ({_AXIS_HELP})")
        sub = getattr(cfg, section)
        if sub is None or not hasattr(sub, fieldname):
            raise ValueError(f"unknown axis {axis!r} ({_AXIS_HELP})")
        return replace(cfg, **{section: replace(sub, **{fieldname: value})})
    raise ValueError(f"unknown axis {axis!r} ({_AXIS_HELP})")


def sweep(base: ProtocolConfig, axis: str, values, mode: str = "analytic") -> list[dict]:
    """One row per axis value; analytic mode uses exact expectations."""
    if mode not in ("analytic", "monte_carlo"):
        raise ValueError(f"mode must be 'analytic' or 'monte_carlo', got {mode!r}")
    rows = []
    for value in values:
        cfg = set_config_axis(base, axis, value)
        row = {"axis": axis, "value": float(value)}
        clip = lambda x: min(max(x, 0.0), 0.5)
        if mode == "analytic":
            report = analytic_report(cfg)
            row.update(
                delta_x=report.rates.delta_x, delta_z=report.rates.delta_z,
                delta_b=report.rates.delta_b, qber=report.qber,
                abort=report.abort,
                rate_smoothed=max(1.0 - 2.0 * binary_entropy(clip(report.qber)), 0.0),
                rate_split=max(1.0 - binary_entropy(clip(report.delta_x_corrected))
                               - binary_entropy(clip(report.delta_z_corrected)), 0.0),
            )
            delta_wm = wm_disturbance_error(cfg.pointer.g, cfg.pointer.sigma_md)
            row["rate_wm_decoy"] = wm_decoy_chain(cfg.system, cfg.decoy, delta_wm).rate
            row["rate_bb84_decoy"] = bb84_decoy_chain(cfg.system, cfg.decoy).rate
        else:
            result = run_protocol(cfg)
            row.update(
                delta_x=result.report.rates.delta_x, delta_z=result.report.rates.delta_z,
                delta_b=result.report.rates.delta_b, qber=result.qber,
                abort=result.abort, rate_smoothed=result.idealized_rate_smoothed,
                rate_split=float("nan"), rate_wm_decoy=result.key_rate,
                rate_bb84_decoy=float("nan"),
                ground_truth_sifted_error=result.ground_truth_sifted_error,
            )
        rows.append(row)
    return rows


def fig3_dataset(g_over_sigma=None, channel_errors=(0.0, 0.02, 0.05, 0.08)):
    """Key-rate reduction vs coupling strength at several depolarizing levels.

    Rate is the idealized max(1 - 2 H2(QBER), 0) with QBER = channel error +
    delta_wm(g/sigma).
    """
    if g_over_sigma is None:
        g_over_sigma = np.arange(0.0, 0.5 + 1e-12, 0.01)
    header = ["g_over_sigma", "channel_error", "rate"]
    rows = []
    for e in channel_errors:
        for gs in g_over_sigma:
            qber = e + wm_disturbance_error(gs, 1.0)
            rate = max(1.0 - 2.0 * binary_entropy(qber), 0.0)
            rows.append([float(gs), float(e), rate])
    return header, rows


def fig5_dataset(phis=None, qbers=(0.08, 0.11)):
    """Calculated rates vs uniform observable bias for depolarizing channels.

    Emits the split variant 1 - H2(dX~) - H2(dZ~) and the smoothed variant
    1 - 2 H2(db~); rows are limited to biases keeping both estimates
    nonnegative, as the protocol enforces.
    """
    if phis is None:
        phis = np.arange(-0.5, 0.5 + 1e-12, 0.005)
    header = ["qber", "phi", "rate_split", "rate_smoothed"]
    rows = []
    for qber in qbers:
        r = 1.0 - 2.0 * qber
        for phi in phis:
            dx, dz = adv.biased_estimates(r, r, float(phi))
            if dx < 0.0 or dz < 0.0:
                continue
            db = 0.5 * (dx + dz)
            rows.append([
                float(qber), float(phi),
                1.0 - binary_entropy(min(dx, 0.5)) - binary_entropy(min(dz, 0.5)),
                1.0 - 2.0 * binary_entropy(min(db, 0.5)),
            ])
    return header, rows


def fig6_dataset(distances=None, params: SystemParams | None = None,
                 cfg: DecoyConfig | None = None, g_over_sigma: float = 0.05):
    """WM vs BB84 decoy rates over distance at the reference system parameters."""
    if distances is None:
        distances = np.arange(0.0, 121.0, 1.0)
    if params is None:
        params = SystemParams()
    if cfg is None:
        cfg = DecoyConfig()
    delta_wm = wm_disturbance_error(g_over_sigma, 1.0)
    header = ["distance_km", "rate_wm", "rate_bb84"]
    rows = []
    for d in distances:
        p = replace(params, distance_km=float(d))
        rows.append([float(d), wm_decoy_chain(p, cfg, delta_wm).rate,
                     bb84_decoy_chain(p, cfg).rate])
    return header, rows


def write_csv(path, header, rows) -> None:
    """Locale-independent CSV: fixed column order, full double precision."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def rows_to_csv(path, rows: list[dict]) -> None:
    """Write sweep dict-rows with a stable column order."""
    if not rows:
        raise ValueError("no rows to write")
    header = list(rows[0].keys())
    write_csv(path, header, [[row[k] for k in header] for row in rows])
