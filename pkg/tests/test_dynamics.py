"""Kernel tests: AdEx neuron and DPI filter against closed-form oracles."""

import math

import numpy as np
import pytest

from dynapsim.dynamics import (
    DT_MAX,
    DpiParams,
    DpiState,
    NeuronParams,
    NeuronState,
    Polarity,
    adex_derivatives,
    apply_spike_reset,
    dpi_inject_spike,
    dpi_step,
    net_synaptic_current,
    resting_state,
    step_neuron,
)
from dynapsim.errors import InvalidStep, NumericalDomain

DT = 1e-5


def run_free(state, params, I, t_total, dt=DT, simplified=False):
    """Step the neuron for t_total seconds, returning the visited V samples."""
    n = int(round(t_total / dt))
    vs = np.empty(n)
    for i in range(n):
        state, _ = step_neuron(state, params, I, dt, simplified=simplified)
        vs[i] = state.V
    return state, vs


class TestAdexDerivatives:
    def test_equilibrium_at_leak_reversal(self):
        p = NeuronParams(I_dc=0.0)
        dv, dw = adex_derivatives(NeuronState(V=p.E_L, w=0.0), p, 0.0, simplified=True)
        assert dv == 0.0 and dw == 0.0

    def test_linear_steady_state(self):
        # Constant current in simplified mode settles at V* = E_L + I/g_L.
        p = NeuronParams(I_dc=0.0)
        I = 0.1e-9
        v_star = p.E_L + I / p.g_L
        dv, _ = adex_derivatives(NeuronState(V=v_star), p, I, simplified=True)
        assert abs(dv) < 1e-12
        state, _ = run_free(NeuronState(V=p.E_L), p, I, t_total=0.03, simplified=True)
        assert state.V == pytest.approx(v_star, rel=1e-6)

    def test_exponential_term_at_threshold(self):
        p = NeuronParams()
        s = NeuronState(V=p.V_T, w=0.0)
        dv_full, _ = adex_derivatives(s, p, 0.0, simplified=False)
        dv_simpl, _ = adex_derivatives(s, p, 0.0, simplified=True)
        assert dv_full - dv_simpl == pytest.approx(p.g_L * p.Delta_T / p.C, rel=1e-12)

    def test_simplified_mode_freezes_adaptation(self):
        p = NeuronParams(a=5e-10)
        _, dw = adex_derivatives(NeuronState(V=1.1, w=1e-12), p, 0.0, simplified=True)
        assert dw == 0.0

    def test_nonfinite_input_raises(self):
        p = NeuronParams()
        with pytest.raises(NumericalDomain):
            adex_derivatives(NeuronState(V=math.nan), p, 0.0)
        with pytest.raises(NumericalDomain):
            adex_derivatives(NeuronState(V=p.E_L), p, math.inf)


class TestStepNeuron:
    def test_leak_relaxation_closed_form(self):
        # V(t) = E_L + delta * exp(-t * g_L / C); check the offset after one
        # membrane time constant against the analytic value.
        p = NeuronParams(I_dc=0.0)
        delta = 0.05
        tau_m = p.C / p.g_L
        state = NeuronState(V=p.E_L + delta)
        n = int(round(tau_m / DT))
        for _ in range(n):
            state, _ = step_neuron(state, p, 0.0, DT, simplified=True)
        assert state.V - p.E_L == pytest.approx(delta / math.e, rel=0.01)

    def test_log_offset_is_linear_in_time(self):
        p = NeuronParams(I_dc=0.0)
        _, vs = run_free(NeuronState(V=p.E_L + 0.05), p, 0.0, t_total=6e-3, simplified=True)
        t = (np.arange(vs.size) + 1) * DT
        y = np.log(vs - p.E_L)
        slope, intercept = np.polyfit(t, y, 1)
        r2 = 1 - np.sum((y - (slope * t + intercept)) ** 2) / np.sum((y - y.mean()) ** 2)
        assert r2 > 0.999
        assert slope == pytest.approx(-p.g_L / p.C, rel=1e-3)

    def test_refractory_clamps_voltage(self):
        p = NeuronParams()
        state = NeuronState(V=p.V_r, w=0.0, t_since_spike=0.0)
        new, spiked = step_neuron(state, p, 5e-9, DT)
        assert not spiked
        assert new.V == p.V_r
        assert new.t_since_spike == pytest.approx(DT)

    def test_entry_above_ceiling_spikes_and_resets(self):
        p = NeuronParams(b=3e-12)
        w0 = 1e-12
        new, spiked = step_neuron(NeuronState(V=p.V_cut + 1e-3, w=w0), p, 0.0, DT)
        assert spiked
        assert new.V == p.V_r
        assert new.w == pytest.approx(w0 + p.b)
        assert new.t_since_spike == 0.0

    def test_reset_exactness_over_spike_train(self):
        # Strong drive: every detected spike must land exactly on V_r and
        # bump w by exactly b (tau_w huge so w is flat between spikes).
        p = NeuronParams(b=2e-12, t_refr=1e-3, tau_w=1e6)
        state = resting_state(p)
        I = 2e-9
        n_spikes = 0
        prev_w = state.w
        for _ in range(4000):
            new, spiked = step_neuron(state, p, I, DT)
            if spiked:
                n_spikes += 1
                assert new.V == p.V_r
                assert new.w == pytest.approx(prev_w + p.b, abs=1e-18)
            prev_w = new.w
            state = new
        assert n_spikes >= 3

    def test_clamp_keeps_voltage_on_rails(self):
        p = NeuronParams()
        state = NeuronState(V=p.E_L)
        lows = []
        for _ in range(2000):
            state, _ = step_neuron(state, p, -50e-9, DT)
            lows.append(state.V)
        lows = np.asarray(lows)
        assert np.all(lows >= p.V_rail_lo) and np.all(lows <= p.V_rail_hi)
        assert lows.min() == p.V_rail_lo  # the drive is strong enough to rail

    def test_integrator_is_second_order(self):
        # Halving dt must cut the max error against a dt/64 reference by
        # about 2**2 (midpoint method), within 20%.
        p = NeuronParams(Delta_T=0.02, V_cut=1.3, a=4e-10, I_dc=0.0)
        I = 0.9 * p.g_L * (p.V_T - p.E_L)  # nonlinear but subthreshold
        t_total = 8e-3
        dt0 = 1e-4

        def trace(dt):
            n = int(round(t_total / dt))
            state = NeuronState(V=p.E_L, w=0.0)
            out = []
            for i in range(1, n + 1):
                state, _ = step_neuron(state, p, I, dt)
                if (i * dt) % dt0 < dt * 0.5 or abs((i * dt) % dt0 - dt0) < dt * 0.5:
                    out.append(state.V)
            return np.asarray(out)

        ref = trace(dt0 / 64)
        e1 = np.max(np.abs(trace(dt0) - ref))
        e2 = np.max(np.abs(trace(dt0 / 2) - ref))
        ratio = e1 / e2
        assert 4.0 * 0.8 < ratio < 4.0 * 1.2

    def test_simplified_matches_full_far_below_threshold(self):
        # With V held more than 10 slope factors under V_T the exponential
        # term is negligible; traces agree to < 1e-3 relative error.
        p = NeuronParams(E_L=0.8, V_T=1.2, V_r=0.7, I_dc=0.0)
        I = 0.5 * p.g_L * 0.1  # settles near 0.85 V, far below V_T - 10*Delta_T
        _, v_full = run_free(NeuronState(V=p.E_L), p, I, 2e-2, simplified=False)
        _, v_simpl = run_free(NeuronState(V=p.E_L), p, I, 2e-2, simplified=True)
        assert np.max(np.abs(v_full - v_simpl) / np.abs(v_full)) < 1e-3

    def test_invalid_dt(self):
        p = NeuronParams()
        with pytest.raises(InvalidStep):
            step_neuron(NeuronState(V=p.E_L), p, 0.0, 0.0)
        with pytest.raises(InvalidStep):
            step_neuron(NeuronState(V=p.E_L), p, 0.0, 2 * DT_MAX)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(7)
        p = NeuronParams(b=1e-12)
        v0 = rng.uniform(0.9, 1.29, size=16)
        w0 = rng.uniform(0.0, 2e-12, size=16)
        ts0 = rng.choice([0.0, np.inf], size=16)
        I = rng.uniform(-1e-9, 1e-9, size=16)
        batch = NeuronState(V=v0.copy(), w=w0.copy(), t_since_spike=ts0.copy())
        for _ in range(50):
            batch, _ = step_neuron(batch, p, I, DT)
        for k in range(16):
            s = NeuronState(V=v0[k], w=w0[k], t_since_spike=ts0[k])
            for _ in range(50):
                s, _ = step_neuron(s, p, I[k], DT)
            assert s.V == pytest.approx(batch.V[k], abs=1e-15)
            assert s.w == pytest.approx(batch.w[k], abs=1e-24)


class TestSpikeReset:
    def test_zero_increment(self):
        p = NeuronParams(b=0.0)
        new = apply_spike_reset(NeuronState(V=p.V_cut, w=0.0), p)
        assert (new.V, new.w, new.t_since_spike) == (p.V_r, 0.0, 0.0)

    def test_additive_increment(self):
        p = NeuronParams(b=4e-12)
        w0 = 2.5e-12
        new = apply_spike_reset(NeuronState(V=p.V_cut, w=w0), p)
        assert new.w == pytest.approx(w0 + p.b)
        again = apply_spike_reset(new, p)
        assert again.w == pytest.approx(w0 + 2 * p.b)


def make_dpi(**kw):
    defaults = dict(tau=8e-3, I_tau=1e-9, I_th=2e-9, w_syn=50e-9, t_pulse=1e-5)
    defaults.update(kw)
    return DpiParams(**defaults)


class TestDpi:
    def test_homogeneous_decay(self):
        par = make_dpi()
        x = 3e-9
        state = DpiState(I_out=x, pulse_remaining=0.0)
        dt = par.tau / 1000
        for _ in range(1000):
            state = dpi_step(state, par, dt)
        assert state.I_out == pytest.approx(x / math.e, rel=1e-3)

    def test_fixed_point_under_sustained_input(self):
        par = make_dpi()
        state = DpiState(I_out=0.0, pulse_remaining=np.inf)
        for _ in range(2000):
            state = dpi_step(state, par, par.tau / 100)
        assert state.I_out == pytest.approx(par.steady_state(), rel=1e-6)

    def test_pulse_peak_matches_closed_form(self):
        # Charging from zero for exactly t_pulse: peak is
        # (I_th/I_tau) * w_syn * (1 - exp(-t_pulse/tau)).
        par = make_dpi(t_pulse=2e-4)
        state = dpi_inject_spike(DpiState(), par)
        dt = 1e-5
        for _ in range(int(round(par.t_pulse / dt))):
            state = dpi_step(state, par, dt)
        expected = par.steady_state() * (1 - math.exp(-par.t_pulse / par.tau))
        assert state.I_out == pytest.approx(expected, rel=1e-9)
        assert state.pulse_remaining == 0.0

    def test_inject_sets_and_extends_pulse(self):
        par = make_dpi()
        s = dpi_inject_spike(DpiState(), par)
        assert s.pulse_remaining == par.t_pulse
        s = dpi_step(s, par, par.t_pulse / 2)
        s = dpi_inject_spike(s, par)  # second spike while still active
        assert s.pulse_remaining == par.t_pulse

    def test_pulse_expiry(self):
        par = make_dpi()
        s = dpi_inject_spike(DpiState(), par)
        s = dpi_step(s, par, par.t_pulse)
        assert s.pulse_remaining == 0.0
        i_at_expiry = s.I_out
        s = dpi_step(s, par, 1e-5)
        assert s.I_out < i_at_expiry  # input is zero, output decays

    def test_oracle_equivalence_piecewise_constant(self):
        # Arbitrary piecewise-constant drive: numerical trace must match the
        # per-segment closed form to < 1e-6 relative error (it is exact).
        rng = np.random.default_rng(42)
        par0 = make_dpi()
        i_out = 0.0
        for _ in range(40):
            w = float(rng.uniform(0.0, 100e-9))
            seg = float(rng.uniform(1e-4, 5e-3))
            par = make_dpi(w_syn=max(w, 1e-8))
            drive_on = rng.random() < 0.6
            state = DpiState(I_out=i_out, pulse_remaining=np.inf if drive_on else 0.0)
            dt = seg / rng.integers(3, 40)
            n = int(round(seg / dt))
            for _ in range(n):
                state = dpi_step(state, par, dt)
            i_ss = par.steady_state() if drive_on else 0.0
            expected = i_ss + (i_out - i_ss) * math.exp(-n * dt / par.tau)
            if expected > 1e-30:
                assert abs(state.I_out - expected) / expected < 1e-6
            i_out = state.I_out

    def test_validity_warning(self, caplog):
        with caplog.at_level("WARNING", logger="dynapsim.dynamics"):
            make_dpi(w_syn=1e-9, I_tau=1e-9)
        assert any("validity" in r.message for r in caplog.records)

    def test_invalid_dt(self):
        with pytest.raises(InvalidStep):
            dpi_step(DpiState(), make_dpi(), 0.0)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        tau = rng.uniform(2e-3, 20e-3, size=8)
        par = DpiParams(tau=tau, I_tau=1e-9, I_th=2e-9, w_syn=rng.uniform(1e-8, 1e-7, size=8))
        state = DpiState(I_out=rng.uniform(0, 1e-9, size=8), pulse_remaining=rng.uniform(0, 3e-5, size=8))
        i0, p0 = state.I_out.copy(), state.pulse_remaining.copy()
        out = dpi_step(state, par, DT)
        for k in range(8):
            pk = DpiParams(tau=tau[k], I_tau=1e-9, I_th=2e-9, w_syn=par.w_syn[k])
            sk = dpi_step(DpiState(I_out=i0[k], pulse_remaining=p0[k]), pk, DT)
            assert sk.I_out == pytest.approx(out.I_out[k], abs=1e-24)


class TestNetCurrent:
    def test_zero(self):
        assert net_synaptic_current(0.0, 0.0, 0.0) == 0.0

    def test_exact_cancellation(self):
        assert net_synaptic_current(1e-9, 0.0, 1e-9) == 0.0

    def test_negative_drive_hyperpolarizes(self):
        # Inhibition exceeding excitation must pull V below E_L: one step from
        # rest has a negative derivative.
        p = NeuronParams(I_dc=0.0)
        I = net_synaptic_current(1e-9, 0.0, 3e-9)
        assert I < 0
        dv, _ = adex_derivatives(NeuronState(V=p.E_L), p, I, simplified=True)
        assert dv < 0
        state, _ = step_neuron(NeuronState(V=p.E_L), p, I, DT, simplified=True)
        assert state.V < p.E_L


class TestParamValidation:
    def test_neuron_invariants(self):
        with pytest.raises(ValueError):
            NeuronParams(C=0.0)
        with pytest.raises(ValueError):
            NeuronParams(V_r=2.0)
        with pytest.raises(ValueError):
            NeuronParams(V_cut=1.0, V_T=1.2)

    def test_dpi_invariants(self):
        with pytest.raises(ValueError):
            make_dpi(tau=0.0)
        with pytest.raises(ValueError):
            make_dpi(w_syn=-1e-9)

    def test_polarity_enum(self):
        par = make_dpi(polarity=Polarity.INHIBITORY_SUBTRACTIVE)
        assert par.polarity is Polarity.INHIBITORY_SUBTRACTIVE
