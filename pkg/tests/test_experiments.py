"""Sweep, selection, and permutation-control tests."""

import numpy as np
import pytest

from dynapsim.errors import InsufficientCandidates
from dynapsim.experiments import (
    CircuitKind,
    CircuitSpec,
    TuningCurve,
    WeightKind,
    circuit_pattern,
    derange,
    measure_slot_latencies,
    permutation_control,
    run_circuit,
    run_isi_sweep,
    select_synapses,
    sweep_weights,
)
from dynapsim.fabric import Address, Fabric, MismatchConfig, VIRTUAL_TAG_BASE
from dynapsim.stimulus import Pattern, SpikeEvent

NEURON = Address(0, 3, 0)
GRID = tuple(k * 1e-3 for k in range(11))


def quiet_fabric():
    return Fabric(MismatchConfig(cv_neuron=0.0, cv_cam=0.0, seed=1))


def make_pair(fabric, exc_fine=None, inh_fine=None):
    return CircuitSpec(
        kind=CircuitKind.PAIR,
        neuron=NEURON,
        exc_slots=(0, 2),
        inh_slots=(1, 3),
        input_tags=(VIRTUAL_TAG_BASE + 10, VIRTUAL_TAG_BASE + 11),
        exc_weight_fine=exc_fine,
        inh_weight_fine=inh_fine,
    )


def make_triplet(fabric, exc_fine=None, inh_fine=None):
    return CircuitSpec(
        kind=CircuitKind.TRIPLET,
        neuron=NEURON,
        exc_slots=(0, 1, 2),
        inh_slots=(3,),
        input_tags=(VIRTUAL_TAG_BASE + 20, VIRTUAL_TAG_BASE + 21, VIRTUAL_TAG_BASE + 22),
        inh_tag=VIRTUAL_TAG_BASE + 23,
        exc_weight_fine=exc_fine,
        inh_weight_fine=inh_fine,
    )


class TestSelection:
    LATS = {4: 20e-3, 9: 15e-3, 2: 10e-3}

    def test_arithmetic_example_coincident_peaks(self):
        # latencies {20, 15, 10} ms, target 5 ms: inputs at 0/5/10 ms all
        # peak at t = 20 ms
        fab = quiet_fabric()
        circ = select_synapses(
            NEURON, [4, 9, 2], 5e-3, fab, kind=CircuitKind.TRIPLET,
            inh_slot=30, latencies=self.LATS,
        )
        assert circ.exc_slots == (4, 9, 2)  # descending latency
        assert circ.selection_residual == pytest.approx(0.0, abs=1e-12)
        peaks = [k * 5e-3 + self.LATS[s] for k, s in enumerate(circ.exc_slots)]
        assert max(peaks) - min(peaks) < 1e-12

    def test_equal_latencies_residual(self):
        fab = quiet_fabric()
        lats = {0: 15e-3, 1: 15e-3, 2: 15e-3}
        circ = select_synapses(
            NEURON, [0, 1, 2], 5e-3, fab, kind=CircuitKind.TRIPLET,
            inh_slot=30, latencies=lats,
        )
        # peak misalignments are 1*target and 2*target: 3*target total
        assert circ.selection_residual == pytest.approx(3 * 5e-3)
        assert circ.exc_slots == (0, 1, 2)  # ties broken by slot index

    def test_unreachable_target_best_approximation(self):
        fab = quiet_fabric()
        lats = {0: 16e-3, 1: 15e-3, 2: 14e-3}  # max pairwise spread 2 ms
        circ = select_synapses(
            NEURON, [0, 1, 2], 8e-3, fab, kind=CircuitKind.TRIPLET,
            inh_slot=30, latencies=lats,
        )
        assert circ.selection_residual > 0
        assert circ.exc_slots == (0, 1, 2)

    def test_insufficient_candidates(self):
        with pytest.raises(InsufficientCandidates):
            select_synapses(NEURON, [0, 1], 5e-3, quiet_fabric(),
                            kind=CircuitKind.TRIPLET, inh_slot=30,
                            latencies={0: 1e-3, 1: 2e-3})

    def test_pair_selection(self):
        circ = select_synapses(
            NEURON, [4, 9, 2], 5e-3, quiet_fabric(), kind=CircuitKind.PAIR,
            inh_slot=30, latencies=self.LATS,
        )
        assert circ.kind is CircuitKind.PAIR
        assert circ.exc_slots == (4, 9)  # 20 then 15 ms: the 5 ms gap
        assert circ.selection_residual == pytest.approx(0.0, abs=1e-12)
        assert len(circ.inh_slots) == 2
        assert len(set(circ.inh_slots) | set(circ.exc_slots)) == 4

    def test_measured_latencies_equal_at_cv_zero(self):
        fab = quiet_fabric()
        lats = measure_slot_latencies(NEURON, [0, 1, 2], 30, fab)
        values = list(lats.values())
        assert len(values) == 3
        assert np.ptp(values) < 1e-9


class TestSweep:
    def test_default_grid_point_count(self):
        fab = quiet_fabric()
        curve = run_isi_sweep(make_pair(fab), GRID, 2, fab)
        assert len(curve.isis) == 11

    def test_deterministic_trials_have_zero_std(self):
        fab = quiet_fabric()
        curve = run_isi_sweep(make_pair(fab), (0.0, 5e-3), 5, fab)
        assert all(s == 0.0 for s in curve.std_spikes)

    def test_trial_isolation_repeatable(self):
        fab = quiet_fabric()
        a = run_isi_sweep(make_pair(fab), (3e-3,), 3, fab, seed=42)
        b = run_isi_sweep(make_pair(fab), (3e-3,), 3, fab, seed=42)
        assert a == b

    def test_single_fine_sweep_degenerates(self):
        import dataclasses

        fab = quiet_fabric()
        circuit = make_pair(fab)
        grid = (0.0, 4e-3)
        [(fine, curve)] = sweep_weights(circuit, WeightKind.EXCITATORY, [140], grid, 2, fab)
        assert fine == 140
        direct = run_isi_sweep(
            dataclasses.replace(circuit, exc_weight_fine=140), grid, 2, fab
        )
        assert curve.mean_spikes == direct.mean_spikes

    def test_excitatory_weight_monotone_total(self):
        fab = quiet_fabric()
        curves = sweep_weights(
            make_pair(fab), WeightKind.EXCITATORY, [100, 150, 200], (0.0, 2e-3, 4e-3), 2, fab
        )
        totals = [c.total for _, c in curves]
        assert totals[0] <= totals[1] <= totals[2]
        assert totals[-1] > totals[0]

    def test_overwhelming_inhibition_silences(self):
        fab = quiet_fabric()
        circuit = make_pair(fab, exc_fine=60, inh_fine=255)
        curve = run_isi_sweep(circuit, (0.0, 5e-3, 10e-3), 2, fab)
        assert all(m == 0.0 for m in curve.mean_spikes)

    def test_continuous_trial_mode_counts_per_window(self):
        fab = quiet_fabric()
        circuit = make_pair(fab)
        isolated = run_isi_sweep(circuit, (5e-3,), 3, fab)
        continuous = run_isi_sweep(
            circuit, (5e-3,), 3, fab, reset_between_trials=False, trial_gap=0.3
        )
        # with a relaxation gap the two protocols agree
        assert continuous.mean_spikes == isolated.mean_spikes

    def test_invalid_grid(self):
        with pytest.raises(ValueError):
            run_isi_sweep(make_pair(quiet_fabric()), (), 2, quiet_fabric())


class TestPairBoundary:
    def test_far_isi_is_additive(self):
        # At 100 ms separation the two channels do not interact: the pair
        # response equals the sum of the single-channel responses.
        fab = quiet_fabric()
        circuit = make_pair(fab)
        far = run_isi_sweep(circuit, (100e-3,), 1, fab)
        total_far = far.mean_spikes[0]
        singles = 0.0
        for tag in circuit.input_tags:
            pattern = Pattern(events=(SpikeEvent(0.0, tag),), duration=0.1)
            result = run_circuit(circuit, pattern, 1, fab)
            singles += result.spike_counts.mean()
        assert total_far == pytest.approx(singles)


class TestPermutation:
    def test_rotation_is_derangement(self):
        assert derange((4, 9, 2)) == (9, 2, 4)
        assert derange((1, 2)) == (2, 1)
        with pytest.raises(ValueError):
            derange((5,))

    def test_cv_zero_curves_identical(self):
        fab = quiet_fabric()
        circuit = make_triplet(fab)
        selected, deranged = permutation_control(circuit, (0.0, 3e-3, 6e-3), 2, fab)
        assert selected.mean_spikes == deranged.mean_spikes

    def test_requires_triplet(self):
        fab = quiet_fabric()
        with pytest.raises(ValueError):
            permutation_control(make_pair(fab), GRID, 1, fab)


class TestSelectivityProperties:
    @pytest.fixture(scope="class")
    def tuned_triplet(self):
        # The shipped triplet operating point: mismatched fabric, lowered
        # weights, adaptation on the experiment core.
        from dynapsim.dynamics import NeuronParams

        fab = Fabric(
            MismatchConfig(0.2, 0.15, seed=13),
            neuron_template=NeuronParams(b=2e-10),
        )
        neuron = Address(0, 2, 0)
        circuit = select_synapses(
            neuron, list(range(10)), 6e-3, fab,
            kind=CircuitKind.TRIPLET, inh_slot=32,
            exc_weight_fine=67, inh_weight_fine=95,
        )
        selected, deranged = permutation_control(circuit, GRID, 1, fab)
        return circuit, selected, deranged

    def test_interior_argmax_and_elevation(self, tuned_triplet):
        circuit, selected, _ = tuned_triplet
        lats = list(circuit.latencies.values())
        assert len(set(lats)) == len(lats)  # distinct candidate latencies
        m = np.array(selected.mean_spikes)
        k = int(np.argmax(m))
        assert 0 < k < m.size - 1
        assert m[k] >= m[0] + 0.5

    def test_selected_peak_exceeds_deranged_at_matched_isi(self, tuned_triplet):
        circuit, selected, deranged = tuned_triplet
        k = int(np.argmax(selected.mean_spikes))
        assert selected.mean_spikes[k] > deranged.mean_spikes[k]


class TestCircuitSpecValidation:
    def test_pair_needs_two_elements(self):
        with pytest.raises(ValueError):
            CircuitSpec(
                kind=CircuitKind.PAIR, neuron=NEURON,
                exc_slots=(0,), inh_slots=(1,), input_tags=(5000,),
            )

    def test_triplet_needs_inh_tag(self):
        with pytest.raises(ValueError):
            CircuitSpec(
                kind=CircuitKind.TRIPLET, neuron=NEURON,
                exc_slots=(0, 1, 2), inh_slots=(3,),
                input_tags=(5000, 5001, 5002),
            )

    def test_distinct_slots(self):
        with pytest.raises(ValueError):
            CircuitSpec(
                kind=CircuitKind.TRIPLET, neuron=NEURON,
                exc_slots=(0, 1, 1), inh_slots=(3,),
                input_tags=(5000, 5001, 5002), inh_tag=5003,
            )

    def test_curve_validation(self):
        with pytest.raises(ValueError):
            TuningCurve(isis=(0.0,), mean_spikes=(1.0, 2.0), std_spikes=(0.0,), n_trials=1)
        with pytest.raises(ValueError):
            TuningCurve(isis=(0.0,), mean_spikes=(1.0,), std_spikes=(0.0,), n_trials=0)

    def test_pattern_kinds(self):
        fab = quiet_fabric()
        p = circuit_pattern(make_pair(fab), 5e-3)
        assert len(p.events) == 2
        t = circuit_pattern(make_triplet(fab), 5e-3)
        assert len(t.events) == 4
