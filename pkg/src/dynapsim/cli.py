"""Run harness: declarative JSON config in, CSV artifacts + manifest out.

One experiment per run. The work partition (chunk sizes, job granularity) is
fixed regardless of the worker count, so `--jobs 1` and `--jobs n` produce
byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .delaylab import (
    DELAY_TARGET_S,
    PRE_STIMULUS_S,
    add_measurement_noise,
    build_core_population,
    build_delay_element,
    characterize_cam_combinations,
    characterize_population,
    delays_of,
    detect_bimodality,
    element_trace,
    histogram_mode,
    measure_delay,
    quantize_trace,
    spiking_fraction,
)
from .dynamics import DT_DEFAULT, DT_MAX, NeuronParams
from .errors import ConfigError, SimError, UnsupportedBias, UnsupportedSynapseType, UnsupportedFeature
from .experiments import (
    CircuitKind,
    CircuitSpec,
    TuningCurve,
    WeightKind,
    measure_slot_latencies,
    permutation_control,
    run_isi_sweep,
    select_synapses,
    sweep_weights,
)
from .fabric import (
    Address,
    BIAS_NAMES,
    BiasCode,
    CoreBiasSet,
    Fabric,
    MismatchConfig,
    SynapseType,
    VIRTUAL_TAG_BASE,
)
from .stimulus import gen_single

EXPERIMENTS = (
    "trace",
    "characterize-population",
    "characterize-cams",
    "sweep-pair",
    "sweep-triplet",
    "sweep-weights",
    "permutation-control",
    "calibrate-mismatch",
)

_NEURON_FIELDS = {f.name for f in dataclasses.fields(NeuronParams)}

ISI_GRID_DEFAULT = [round(k * 1e-3, 9) for k in range(11)]


def default_config(experiment: str = "characterize-population") -> dict:
    """A complete, runnable configuration for the given experiment."""
    cfg: dict[str, Any] = {
        "experiment": experiment,
        "seed": 7,
        "out_dir": "out",
        "dt_s": DT_DEFAULT,
        "fabric": {
            "mismatch": {"cv_neuron": 0.2, "cv_cam": 0.15},
            "biases": {},
            "neuron": {},
            "enable_nmda_gating": False,
        },
        "run": {},
    }
    run: dict[str, Any] = {}
    if experiment == "trace":
        run = {
            "chip": 0, "core": 0, "neuron": 0,
            "exc_slot": 0, "inh_slot": 1,
            "input_tag": VIRTUAL_TAG_BASE,
            "pre_s": PRE_STIMULUS_S, "post_s": 0.1,
            "simplified": False, "quantize_bits": None, "noise_volts": 0.0,
            "cv_zero": True,
        }
    elif experiment == "characterize-population":
        run = {
            "chip": 0, "core": 0,
            "exc_slot": 0, "inh_slot": 1,
            "input_tag": VIRTUAL_TAG_BASE,
            "pre_s": PRE_STIMULUS_S, "post_s": 0.1,
            "bin_width_s": 1e-3,
        }
    elif experiment == "characterize-cams":
        run = {
            "chip": 0, "core": 1, "neuron": 2,
            "n_pairs": 256,
            "input_tag": VIRTUAL_TAG_BASE,
            "pre_s": PRE_STIMULUS_S, "post_s": 0.1,
            "bin_width_s": 1e-3,
        }
    elif experiment in ("sweep-pair", "sweep-triplet", "sweep-weights", "permutation-control"):
        kind = "pair" if experiment in ("sweep-pair", "sweep-weights") else "triplet"
        run = {
            "chip": 0, "core": 2, "neuron": 0,
            "candidate_slots": list(range(16)),
            "inh_slot": 32,
            "target_isi_s": 5e-3,
            "isi_grid_s": ISI_GRID_DEFAULT,
            "n_trials": 100,
            "exc_weight_fine": None,
            "inh_weight_fine": None,
            "reset_between_trials": True,
            "trial_gap_s": 0.2,
            "kind": kind,
        }
        if experiment == "sweep-weights":
            run["which"] = "excitatory"
            run["fine_values"] = [60, 100, 140, 180]
    elif experiment == "calibrate-mismatch":
        run = {
            "chip": 0, "core": 0,
            "exc_slot": 0, "inh_slot": 1,
            "input_tag": VIRTUAL_TAG_BASE,
            "cv_neuron_grid": [0.1, 0.15, 0.2, 0.25],
            "cv_cam_grid": [0.1, 0.15, 0.2],
            "target_std_s": 8e-3,
            "bin_width_s": 1e-3,
        }
    cfg["run"] = run
    return cfg


# -- validation ---------------------------------------------------------------


def _check_int(diags, value, path, lo=None, hi=None):
    if not isinstance(value, int) or isinstance(value, bool):
        diags.append(f"{path}: expected an integer, got {value!r}")
        return False
    if lo is not None and value < lo or hi is not None and value > hi:
        diags.append(f"{path}: {value} outside {lo}..{hi}")
        return False
    return True


def _check_number(diags, value, path, lo=None):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        diags.append(f"{path}: expected a number, got {value!r}")
        return False
    if lo is not None and value < lo:
        diags.append(f"{path}: {value} below minimum {lo}")
        return False
    return True


def validate(config: dict) -> list[str]:
    """Full schema and cross-reference check; empty list means valid."""
    diags: list[str] = []
    if not isinstance(config, dict):
        return ["config: expected a JSON object"]

    experiment = config.get("experiment")
    if experiment not in EXPERIMENTS:
        diags.append(f"experiment: {experiment!r} not one of {sorted(EXPERIMENTS)}")
    if "seed" not in config:
        diags.append("seed: required (no wall-clock seeding)")
    else:
        _check_int(diags, config["seed"], "seed", lo=0, hi=2**64 - 1)
    if "dt_s" in config:
        if _check_number(diags, config["dt_s"], "dt_s", lo=0):
            if not 0 < config["dt_s"] <= DT_MAX:
                diags.append(f"dt_s: must be in (0, {DT_MAX}]")
    if "out_dir" in config and not isinstance(config["out_dir"], str):
        diags.append("out_dir: expected a string")

    fab = config.get("fabric", {})
    if not isinstance(fab, dict):
        diags.append("fabric: expected an object")
        fab = {}
    for key in fab:
        if key not in ("mismatch", "biases", "neuron", "c_syn_farads", "dac_gain", "enable_nmda_gating"):
            diags.append(f"fabric.{key}: unknown field")
    mm = fab.get("mismatch", {})
    for cv_key in ("cv_neuron", "cv_cam"):
        if cv_key in mm:
            _check_number(diags, mm[cv_key], f"fabric.mismatch.{cv_key}", lo=0)
    for name, code in fab.get("biases", {}).items():
        path = f"fabric.biases.{name}"
        if name not in BIAS_NAMES:
            diags.append(f"{path}: unknown bias parameter")
            continue
        if not (isinstance(code, (list, tuple)) and len(code) in (2, 3)):
            diags.append(f"{path}: expected [coarse, fine] or [coarse, fine, level]")
            continue
        _check_int(diags, code[0], f"{path}.coarse", 0, 7)
        _check_int(diags, code[1], f"{path}.fine", 0, 255)
        if len(code) == 3 and code[2] not in ("H", "L"):
            diags.append(f"{path}.level: must be 'H' or 'L'")
    for name, value in fab.get("neuron", {}).items():
        if name not in _NEURON_FIELDS:
            diags.append(f"fabric.neuron.{name}: unknown neuron parameter")
        else:
            _check_number(diags, value, f"fabric.neuron.{name}")
    if fab.get("neuron"):
        try:
            _neuron_from_config(fab)
        except (ValueError, TypeError) as err:
            diags.append(f"fabric.neuron: {err}")

    run = config.get("run", {})
    if not isinstance(run, dict):
        diags.append("run: expected an object")
        run = {}
    if experiment in EXPERIMENTS:
        diags.extend(_validate_run(experiment, run))
    return diags


def _validate_run(experiment: str, run: dict) -> list[str]:
    diags: list[str] = []
    known = set(default_config(experiment)["run"])
    for key in run:
        if key not in known:
            diags.append(f"run.{key}: unknown field for {experiment}")

    def slot(key, value):
        if _check_int(diags, value, f"run.{key}", lo=0):
            if value > 63:
                diags.append(f"run.{key}: slot {value} outside the 64-slot CAM block (0..63)")

    for key in ("chip", "core"):
        if key in run:
            _check_int(diags, run[key], f"run.{key}", 0, 3)
    if "neuron" in run:
        _check_int(diags, run["neuron"], "run.neuron", 0, 255)
    for key in ("exc_slot", "inh_slot"):
        if key in run:
            slot(key, run[key])
    if "input_tag" in run:
        _check_int(diags, run["input_tag"], "run.input_tag", lo=0)
    if "n_pairs" in run:
        _check_int(diags, run["n_pairs"], "run.n_pairs", 1, 64 * 63)
    if "candidate_slots" in run:
        if not isinstance(run["candidate_slots"], list) or not run["candidate_slots"]:
            diags.append("run.candidate_slots: expected a non-empty list")
        else:
            for i, s in enumerate(run["candidate_slots"]):
                slot(f"candidate_slots[{i}]", s)
    if "isi_grid_s" in run:
        grid = run["isi_grid_s"]
        if not isinstance(grid, list) or not grid:
            diags.append("run.isi_grid_s: expected a non-empty list of seconds")
        else:
            for i, isi in enumerate(grid):
                _check_number(diags, isi, f"run.isi_grid_s[{i}]", lo=0)
    if "n_trials" in run:
        _check_int(diags, run["n_trials"], "run.n_trials", lo=1)
    for key in ("exc_weight_fine", "inh_weight_fine"):
        if run.get(key) is not None:
            _check_int(diags, run[key], f"run.{key}", 0, 255)
    if "fine_values" in run:
        for i, v in enumerate(run.get("fine_values", [])):
            _check_int(diags, v, f"run.fine_values[{i}]", 0, 255)
    if "which" in run and run["which"] not in ("excitatory", "inhibitory"):
        diags.append("run.which: must be 'excitatory' or 'inhibitory'")
    if "kind" in run and run["kind"] not in ("pair", "triplet"):
        diags.append("run.kind: must be 'pair' or 'triplet'")
    for key in ("pre_s", "post_s", "trial_gap_s", "target_isi_s", "bin_width_s", "noise_volts", "target_std_s"):
        if key in run and run[key] is not None:
            _check_number(diags, run[key], f"run.{key}", lo=0)
    if "quantize_bits" in run and run["quantize_bits"] is not None:
        _check_int(diags, run["quantize_bits"], "run.quantize_bits", 1, 16)
    for key in ("cv_neuron_grid", "cv_cam_grid"):
        if key in run:
            for i, v in enumerate(run[key]):
                _check_number(diags, v, f"run.{key}[{i}]", lo=0)
    return diags


# -- fabric construction -------------------------------------------------------


def _neuron_from_config(fab_cfg: dict) -> NeuronParams:
    overrides = {k: float(v) for k, v in fab_cfg.get("neuron", {}).items()}
    return dataclasses.replace(NeuronParams(), **overrides)


def build_fabric(config: dict, cv: tuple[float, float] | None = None) -> Fabric:
    fab_cfg = config.get("fabric", {})
    mm_cfg = fab_cfg.get("mismatch", {})
    cv_neuron = mm_cfg.get("cv_neuron", 0.2) if cv is None else cv[0]
    cv_cam = mm_cfg.get("cv_cam", 0.15) if cv is None else cv[1]
    biases = {
        name: BiasCode(code[0], code[1], code[2] if len(code) == 3 else "H")
        for name, code in fab_cfg.get("biases", {}).items()
    }
    kwargs: dict[str, Any] = {}
    if "c_syn_farads" in fab_cfg:
        kwargs["c_syn"] = float(fab_cfg["c_syn_farads"])
    if "dac_gain" in fab_cfg:
        kwargs["dac_gain"] = {k: float(v) for k, v in fab_cfg["dac_gain"].items()}
    return Fabric(
        MismatchConfig(cv_neuron=cv_neuron, cv_cam=cv_cam, seed=config["seed"]),
        CoreBiasSet(codes=biases),
        neuron_template=_neuron_from_config(fab_cfg),
        enable_nmda_gating=bool(fab_cfg.get("enable_nmda_gating", False)),
        **kwargs,
    )


# -- deterministic parallel map -------------------------------------------------


def _call(packed):
    fn, args = packed
    return fn(*args)


def run_jobs(fn: Callable, arg_tuples: Sequence[tuple], jobs: int) -> list:
    """Order-preserving map; the work units are identical for any job count."""
    packed = [(fn, args) for args in arg_tuples]
    if jobs <= 1 or len(packed) <= 1:
        return [_call(p) for p in packed]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_call, packed))


# -- CSV / manifest writers -----------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def delays_rows(entries) -> list[list]:
    rows = []
    for e in entries:
        m = e.measurement
        rows.append(
            [
                e.neuron.neuron,
                e.exc_slot,
                e.inh_slot,
                m.onset if m else float("nan"),
                m.peak_time if m else float("nan"),
                m.delay if m else float("nan"),
                int(e.spiked),
            ]
        )
    return rows


DELAYS_HEADER = ["neuron", "exc_slot", "inh_slot", "onset_s", "peak_s", "delay_s", "spiked"]
TUNING_HEADER = ["isi_s", "mean_spikes", "std_spikes", "n_trials"]


def tuning_rows(curve: TuningCurve) -> list[list]:
    return [
        [isi, m, s, curve.n_trials]
        for isi, m, s in zip(curve.isis, curve.mean_spikes, curve.std_spikes)
    ]


def effective_parameters(fabric: Fabric) -> dict:
    """Every physically meaningful value a run depends on, for the manifest."""
    neuron = {
        f.name: getattr(fabric.neuron_template, f.name) for f in dataclasses.fields(NeuronParams)
    }
    synapses = {}
    for syn in (SynapseType.EXC_SLOW, SynapseType.EXC_FAST, SynapseType.INH_SUBTRACTIVE):
        par = None
        try:
            from .fabric import effective_dpi_params

            par = effective_dpi_params(
                fabric.core_biases, syn, c_syn=fabric.c_syn, dac_gain=fabric.dac_gain
            )
        except (UnsupportedSynapseType, KeyError):
            continue
        synapses[syn.value] = {
            "tau_s": par.tau,
            "I_tau_amps": par.I_tau,
            "I_th_amps": par.I_th,
            "w_syn_amps": par.w_syn,
            "t_pulse_s": par.t_pulse,
        }
    return {
        "neuron": neuron,
        "synapses_nominal": synapses,
        "c_syn_farads": fabric.c_syn,
        "dac_gain": fabric.dac_gain,
        "mismatch": {
            "cv_neuron": fabric.mismatch.cv_neuron,
            "cv_cam": fabric.mismatch.cv_cam,
            "seed": fabric.mismatch.seed,
        },
        "biases": {
            name: [code.coarse, code.fine, code.level]
            for name, code in fabric.core_biases.codes.items()
        },
    }


def write_manifest(out_dir: Path, config: dict, fabric: Fabric, extra: dict, artifacts: list[str]) -> None:
    manifest = {
        "version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config,
        "effective_parameters": effective_parameters(fabric),
        "artifacts": sorted(artifacts),
    }
    manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# -- experiment runners ----------------------------------------------------------


def _population_chunk(fabric, chip, core, lo, hi, input_tag, dt, pre, post):
    from .delaylab import characterize_population

    # Chunked by neuron range with fixed chunk size; the chunk boundary, not
    # the worker count, defines the arrays the solver sees.
    entries = characterize_population(
        (chip, core), _restrict(fabric, chip, core, lo, hi), gen_single(input_tag),
        dt=dt, t_pre=pre, duration=post,
    )
    return entries


def _restrict(fabric: Fabric, chip: int, core: int, lo: int, hi: int) -> Fabric:
    """A shallow fabric view holding only neurons [lo, hi) of the core."""
    import copy

    view = copy.copy(fabric)
    view._cams = {
        addr: slots
        for addr, slots in fabric._cams.items()
        if not (addr.chip == chip and addr.core == core) or lo <= addr.neuron < hi
    }
    return view


POPULATION_CHUNK = 32


def run_population(config: dict, fabric: Fabric, jobs: int):
    run = config["run"]
    chip, core = run["chip"], run["core"]
    tag = run["input_tag"]
    build_core_population(fabric, chip, core, tag, run["exc_slot"], run["inh_slot"])
    fabric.check_simulatable(Address(chip, core, n) for n in range(256))
    args = [
        (fabric, chip, core, lo, lo + POPULATION_CHUNK, tag, config.get("dt_s", DT_DEFAULT),
         run.get("pre_s", PRE_STIMULUS_S), run.get("post_s", 0.1))
        for lo in range(0, 256, POPULATION_CHUNK)
    ]
    chunks = run_jobs(_population_chunk, args, jobs)
    entries = [e for chunk in chunks for e in chunk]
    d = delays_of(entries)
    bim, _ = detect_bimodality(d, run.get("bin_width_s", 1e-3))
    stats = {
        "mode_s": histogram_mode(d, run.get("bin_width_s", 1e-3)),
        "std_s": float(np.nanstd(d)),
        "median_s": float(np.nanmedian(d)),
        "spiking_fraction": spiking_fraction(entries),
        "measured": int(np.isfinite(d).sum()),
        "bimodal": bool(bim),
    }
    return entries, stats


def _cams_chunk(fabric, chip, core, neuron_idx, pair_lo, pair_hi, input_tag, dt, pre, post):
    from .delaylab import cam_pair_grid, simulate_elements, _measure_batch

    neuron = Address(chip, core, neuron_idx)
    pairs = cam_pair_grid(pair_hi)[pair_lo:pair_hi]
    items = [(neuron, i, j) for i, j in pairs]
    result = simulate_elements(
        fabric, items, input_tag, gen_single(input_tag), dt=dt, t_pre=pre, duration=post + 0.0
    )
    return _measure_batch(result, items)


def run_cams(config: dict, fabric: Fabric, jobs: int):
    run = config["run"]
    n_pairs = run["n_pairs"]
    args = [
        (fabric, run["chip"], run["core"], run["neuron"], lo, min(lo + POPULATION_CHUNK, n_pairs),
         run["input_tag"], config.get("dt_s", DT_DEFAULT),
         run.get("pre_s", PRE_STIMULUS_S), run.get("post_s", 0.1))
        for lo in range(0, n_pairs, POPULATION_CHUNK)
    ]
    chunks = run_jobs(_cams_chunk, args, jobs)
    entries = [e for chunk in chunks for e in chunk]
    d = delays_of(entries)
    bim, info = detect_bimodality(d, run.get("bin_width_s", 1e-3))
    stats = {
        "bimodal": bool(bim),
        "mode_delays_s": list(info.get("mode_delays", ())),
        "spiking_fraction": spiking_fraction(entries),
        "measured": int(np.isfinite(d).sum()),
    }
    return entries, stats


def _build_circuit(config: dict, fabric: Fabric) -> CircuitSpec:
    run = config["run"]
    kind = CircuitKind.PAIR if run.get("kind", "pair") == "pair" else CircuitKind.TRIPLET
    neuron = Address(run["chip"], run["core"], run["neuron"])
    return select_synapses(
        neuron,
        run["candidate_slots"],
        run["target_isi_s"],
        fabric,
        kind=kind,
        inh_slot=run.get("inh_slot"),
        exc_weight_fine=run.get("exc_weight_fine"),
        inh_weight_fine=run.get("inh_weight_fine"),
    )


def _sweep_point(circuit, isi, n_trials, fabric, dt, reset, gap):
    curve = run_isi_sweep(
        circuit, [isi], n_trials, fabric, dt=dt,
        reset_between_trials=reset, trial_gap=gap,
    )
    return curve.mean_spikes[0], curve.std_spikes[0]


def run_sweep(config: dict, fabric: Fabric, jobs: int, circuit: CircuitSpec | None = None):
    run = config["run"]
    if circuit is None:
        circuit = _build_circuit(config, fabric)
    dt = config.get("dt_s", DT_DEFAULT)
    args = [
        (circuit, isi, run["n_trials"], fabric, dt,
         run.get("reset_between_trials", True), run.get("trial_gap_s", 0.2))
        for isi in run["isi_grid_s"]
    ]
    points = run_jobs(_sweep_point, args, jobs)
    curve = TuningCurve(
        isis=tuple(run["isi_grid_s"]),
        mean_spikes=tuple(p[0] for p in points),
        std_spikes=tuple(p[1] for p in points),
        n_trials=run["n_trials"],
    )
    return circuit, curve


def circuit_summary(circuit: CircuitSpec) -> dict:
    return {
        "kind": circuit.kind.value,
        "neuron": [circuit.neuron.chip, circuit.neuron.core, circuit.neuron.neuron],
        "exc_slots": list(circuit.exc_slots),
        "inh_slots": list(circuit.inh_slots),
        "input_tags": list(circuit.input_tags),
        "inh_tag": circuit.inh_tag,
        "exc_weight_fine": circuit.exc_weight_fine,
        "inh_weight_fine": circuit.inh_weight_fine,
        "selection_residual_s": circuit.selection_residual,
        "latencies_s": {str(k): v for k, v in (circuit.latencies or {}).items()},
    }


def run_experiment(config: dict, out_dir: Path, jobs: int) -> None:
    experiment = config["experiment"]
    fabric = build_fabric(config)
    artifacts: list[str] = []
    extra: dict[str, Any] = {}
    writes: list[tuple[Path, Sequence[str], list]] = []

    if experiment == "trace":
        run = config["run"]
        if run.get("cv_zero", True):
            fabric = build_fabric(config, cv=(0.0, 0.0))
        neuron = Address(run["chip"], run["core"], run["neuron"])
        element = build_delay_element(
            neuron, run["exc_slot"], run["inh_slot"], run["input_tag"], fabric, force=True
        )
        fabric.check_simulatable([neuron])
        trace = element_trace(
            element, fabric, gen_single(run["input_tag"]),
            dt=config.get("dt_s", DT_DEFAULT),
            t_pre=run.get("pre_s", PRE_STIMULUS_S),
            duration=run.get("post_s", 0.1),
            simplified=run.get("simplified", False),
        )
        if run.get("noise_volts", 0.0) > 0:
            trace = add_measurement_noise(trace, run["noise_volts"], config["seed"])
        if run.get("quantize_bits"):
            trace = quantize_trace(trace, run["quantize_bits"])
        name = f"trace_c{run['chip']}c{run['core']}n{run['neuron']}.csv"
        writes.append(
            (out_dir / name, ["t_s", "V_volts"], [[t, v] for t, v in zip(trace.t, trace.samples)])
        )
        artifacts.append(name)
        m = measure_delay(trace)
        entry_rows = [[neuron.neuron, run["exc_slot"], run["inh_slot"], m.onset, m.peak_time, m.delay, int(m.spiked)]]
        writes.append((out_dir / "delays.csv", DELAYS_HEADER, entry_rows))
        artifacts.append("delays.csv")
        extra["measurement"] = {
            "onset_s": m.onset, "peak_s": m.peak_time, "delay_s": m.delay,
            "spiked": m.spiked, "dip_depth_v": m.dip_depth,
            "rebound_height_v": m.rebound_height,
            "delay_target_s": DELAY_TARGET_S,
        }

    elif experiment == "characterize-population":
        entries, stats = run_population(config, fabric, jobs)
        writes.append((out_dir / "delays.csv", DELAYS_HEADER, delays_rows(entries)))
        artifacts.append("delays.csv")
        extra["population_stats"] = stats

    elif experiment == "characterize-cams":
        entries, stats = run_cams(config, fabric, jobs)
        writes.append((out_dir / "delays.csv", DELAYS_HEADER, delays_rows(entries)))
        artifacts.append("delays.csv")
        extra["cam_stats"] = stats

    elif experiment in ("sweep-pair", "sweep-triplet"):
        circuit, curve = run_sweep(config, fabric, jobs)
        name = "tuning_pair.csv" if experiment == "sweep-pair" else "tuning_triplet.csv"
        writes.append((out_dir / name, TUNING_HEADER, tuning_rows(curve)))
        artifacts.append(name)
        extra["circuit"] = circuit_summary(circuit)

    elif experiment == "sweep-weights":
        run = config["run"]
        circuit = _build_circuit(config, fabric)
        which = WeightKind.EXCITATORY if run["which"] == "excitatory" else WeightKind.INHIBITORY
        for fine in run["fine_values"]:
            varied = dataclasses.replace(
                circuit,
                exc_weight_fine=fine if which is WeightKind.EXCITATORY else circuit.exc_weight_fine,
                inh_weight_fine=fine if which is WeightKind.INHIBITORY else circuit.inh_weight_fine,
            )
            _, curve = run_sweep(config, fabric, jobs, circuit=varied)
            name = f"tuning_{run['which']}_fine{fine:03d}.csv"
            writes.append((out_dir / name, TUNING_HEADER, tuning_rows(curve)))
            artifacts.append(name)
        extra["circuit"] = circuit_summary(circuit)

    elif experiment == "permutation-control":
        run = config["run"]
        circuit = _build_circuit(config, fabric)
        from .experiments import derange

        deranged = dataclasses.replace(circuit, exc_slots=derange(circuit.exc_slots))
        _, selected_curve = run_sweep(config, fabric, jobs, circuit=circuit)
        _, deranged_curve = run_sweep(config, fabric, jobs, circuit=deranged)
        writes.append((out_dir / "tuning_selected.csv", TUNING_HEADER, tuning_rows(selected_curve)))
        writes.append((out_dir / "tuning_deranged.csv", TUNING_HEADER, tuning_rows(deranged_curve)))
        artifacts += ["tuning_selected.csv", "tuning_deranged.csv"]
        extra["circuit"] = circuit_summary(circuit)
        extra["deranged_exc_slots"] = list(deranged.exc_slots)

    elif experiment == "calibrate-mismatch":
        run = config["run"]
        rows = []
        best = None
        for cv_n in run["cv_neuron_grid"]:
            for cv_c in run["cv_cam_grid"]:
                fab = build_fabric(config, cv=(cv_n, cv_c))
                build_core_population(fab, run["chip"], run["core"], run["input_tag"],
                                      run["exc_slot"], run["inh_slot"])
                entries = characterize_population(
                    (run["chip"], run["core"]), fab, gen_single(run["input_tag"]),
                    dt=config.get("dt_s", DT_DEFAULT),
                )
                d = delays_of(entries)
                mode = histogram_mode(d, run.get("bin_width_s", 1e-3))
                std = float(np.nanstd(d))
                frac = spiking_fraction(entries)
                bim, _ = detect_bimodality(d, run.get("bin_width_s", 1e-3))
                rows.append([cv_n, cv_c, mode, std, frac, int(np.isfinite(d).sum()), int(bim)])
                valid = (not bim) and 10e-3 <= mode <= 20e-3 and 2e-3 <= std <= 15e-3 and 0.3 <= frac <= 0.7
                score = (not valid, abs(std - run.get("target_std_s", 8e-3)))
                if best is None or score < best[0]:
                    best = (score, cv_n, cv_c)
        writes.append(
            (out_dir / "calibration.csv",
             ["cv_neuron", "cv_cam", "mode_s", "std_s", "spiking_fraction", "measured", "bimodal"],
             rows)
        )
        artifacts.append("calibration.csv")
        extra["fitted"] = {"cv_neuron": best[1], "cv_cam": best[2]}

    else:  # pragma: no cover - validated upstream
        raise ConfigError(f"unknown experiment {experiment!r}")

    # All writes happen after the experiment succeeded (atomic failure).
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, header, rows in writes:
        write_csv(path, header, rows)
    write_manifest(out_dir, config, fabric, extra, artifacts)


def run(config: dict, out_dir: str | Path | None = None, jobs: int = 1) -> int:
    """Validate and execute; returns the process exit code."""
    diags = validate(config)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return 1
    out = Path(out_dir if out_dir is not None else config.get("out_dir", "out"))
    try:
        run_experiment(config, out, jobs)
    except (UnsupportedSynapseType, UnsupportedBias) as err:
        print(f"unsupported feature: {err}", file=sys.stderr)
        return 2
    except SimError as err:
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dynapsim",
        description="Neuromorphic-core emulator experiment harness",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--jobs", type=int, default=1, help="worker count (results identical)")
    parser.add_argument("--validate-only", action="store_true", help="check the config and exit")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: cannot read {args.config}: {err}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config["seed"] = args.seed

    if args.validate_only:
        diags = validate(config)
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return 1 if diags else 0

    return run(config, out_dir=args.out, jobs=args.jobs)


if __name__ == "__main__":
    sys.exit(main())
