"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``. The lines are also
collected into an "acceptance criteria" section of the terminal summary.
Criterion 6 trains ten models on a single core and takes several minutes.
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

from scfusion.audio import SpectrogramConfig, load_audio, spectrogram, write_wav
from scfusion.cli import main
from scfusion.config import load_config
from scfusion.core import (
    GROUPS,
    AreaParams,
    ScfModel,
    UnimodalArea,
    activation,
    initial_state,
    lateral_input,
    project_stimuli,
    run_forward,
    step,
)
from scfusion.data import (
    EmbeddingDataset,
    decode_dataset,
    encode_dataset,
    fold_indices,
    split_groups,
    synth_generate,
)
from scfusion.gradcheck import check_gradients, small_problem
from scfusion.trainer import ConcatBaseline, cross_validate

ROOT = Path(__file__).resolve().parents[1]

# tolerances and budgets
ORACLE_TOL = 1e-10
ORACLE_BUDGET_S = 60.0
FIXED_POINT_SLACK = 1e-12
GRAD_H = 1e-5
GRAD_TOL = 1e-4
GRAD_BUDGET_S = 30.0
FUSION_TARGET = 0.95
FUSION_BUDGET_S = 15 * 60.0
ZSCORE_MEAN_TOL = 1e-9
ZSCORE_VAR_TOL = 1e-6


def test_criterion_1_lateral_oracle(acceptance):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        kernel = rng.uniform(-3.0, 3.0, (17, 17))
        z = rng.random((17, 17))
        naive = lateral_input(z, kernel, mode="naive")
        fast = lateral_input(z, kernel, mode="fast")
        worst = max(worst, float(np.max(np.abs(naive - fast))))
    elapsed = time.perf_counter() - start
    acceptance(
        1, "naive vs fast lateral input, 1000 random 17x17 pairs",
        worst < ORACLE_TOL and elapsed < ORACLE_BUDGET_S,
        f"max-abs {worst:.2e} (< {ORACLE_TOL:g}), {elapsed:.1f} s (< {ORACLE_BUDGET_S:g} s)",
    )


def test_criterion_2_fixed_point(acceptance):
    rng = np.random.default_rng(2)
    rows = []
    ok = True
    for tau in (1.0, 2.0, 3.0, 10.0):
        p = AreaParams(tau=tau, l_ex=0.0, l_in=0.0)
        rf = [rng.uniform(-0.5, 0.5, (289, 8)) for _ in range(2)]
        model = ScfModel(
            (17, 17), [UnimodalArea(p, r, 0.0, 0.0, n) for r, n in zip(rf, "av")], p, steps=50
        )
        stim = [rng.standard_normal(8), rng.standard_normal(8)]
        res = run_forward(model, stim)
        proj = project_stimuli(model, stim)
        # with k = 0 the multimodal input is identically zero
        targets = [activation(proj[0], p), activation(proj[1], p), activation(np.zeros((17, 17)), p)]
        err = max(float(np.max(np.abs(z - t))) for z, t in zip(res.state, targets))
        bound = ((tau - 1) / tau) ** 50 + FIXED_POINT_SLACK
        ok &= err < bound
        rows.append(f"tau={tau:g}: {err:.4e} < {bound:.4e}")
    acceptance(2, "fixed point after T=50 with couplings zeroed", ok, "; ".join(rows))


def test_criterion_3_boundedness(acceptance):
    rng = np.random.default_rng(3)
    lo, hi = np.inf, -np.inf
    for _ in range(10_000):
        shape = tuple(rng.integers(2, 8, 2))
        n = shape[0] * shape[1]

        def area_params():
            return AreaParams(
                tau=1.0 + rng.exponential(5.0) * rng.integers(0, 2),
                theta=rng.uniform(-2, 2), slope=rng.uniform(0.0, 50.0),
                l_ex=rng.uniform(0, 20), l_in=rng.uniform(0, 20),
                sigma_ex=rng.uniform(0.1, 5), sigma_in=rng.uniform(0.1, 5),
            )

        d = int(rng.integers(1, 6))
        areas = [
            UnimodalArea(area_params(), rng.normal(0, 10, (n, d)), rng.uniform(-10, 10), rng.uniform(-20, 20), name)
            for name in "av"
        ]
        model = ScfModel(shape, areas, area_params(), steps=1)
        state = [rng.random(shape) for _ in range(3)]
        if rng.random() < 0.1:
            state = [np.round(s) for s in state]  # saturated corners
        proj = project_stimuli(model, [rng.normal(0, 10, d) for _ in range(2)])
        new = step(model, state, proj)
        lo = min(lo, min(float(z.min()) for z in new))
        hi = max(hi, max(float(z.max()) for z in new))
    acceptance(
        3, "10,000 random single steps stay in [0, 1]",
        lo >= 0.0 and hi <= 1.0, f"observed range [{lo:.3g}, {hi:.17g}]",
    )


def test_criterion_4_gradient_check(acceptance):
    start = time.perf_counter()
    model, head, stimuli, labels = small_problem(grid=(5, 5), steps=3, dim=4, hidden=8)
    assert model.trainable == frozenset(GROUPS)
    report = check_gradients(model, head, stimuli, labels, h=GRAD_H, tol=GRAD_TOL)
    elapsed = time.perf_counter() - start
    names = {e.name for e in report.checked}
    all_params = set(model.get_params()) | set(head.get_params())
    acceptance(
        4, "analytic vs central finite-difference gradients (5x5, T=3, D=4, hidden 8)",
        report.passed and elapsed < GRAD_BUDGET_S and names == all_params,
        f"worst rel error {report.worst:.2e} (< {GRAD_TOL:g}) over {len(report.checked)} entries "
        f"in {len(names)}/{len(all_params)} tensors, {elapsed:.1f} s (< {GRAD_BUDGET_S:g} s)",
    )


def test_criterion_5_multisensory_enhancement(acceptance):
    failures = 0
    smallest_margin = np.inf
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(3, 12)), int(rng.integers(3, 12)))
        n = shape[0] * shape[1]

        def params():
            return AreaParams(
                tau=rng.uniform(1.0, 10.0), theta=rng.uniform(0.0, 1.0), slope=rng.uniform(1.0, 20.0),
                l_ex=0.0, l_in=0.0,
            )

        areas = [
            UnimodalArea(params(), rng.uniform(0.1, 3.0) * np.eye(n), rng.uniform(0.05, 5.0), rng.uniform(0.05, 20.0), s)
            for s in "av"
        ]
        model = ScfModel(shape, areas, params(), steps=int(rng.integers(1, 30)))
        loc = int(rng.integers(n))
        cue = np.zeros(n)
        cue[loc] = 1.0
        silent = np.zeros(n)

        def multimodal(stimuli):
            hist = run_forward(model, stimuli, record=True).history
            return np.array([h[2].reshape(-1)[loc] for h in hist[1:]])  # skip the rest state

        both = multimodal([cue, cue])
        single = np.maximum(multimodal([cue, silent]), multimodal([silent, cue]))
        margin = float(np.min(both - single))
        smallest_margin = min(smallest_margin, margin)
        failures += int(margin < 0)
    acceptance(
        5, "bimodal multimodal activity >= max unimodal-only, 100 seeded configurations",
        failures == 0, f"{failures} violations, smallest margin {smallest_margin:.3g} over steps 1..T",
    )


def test_criterion_6_synthetic_fusion(acceptance):
    cfg = load_config(ROOT / "configs" / "synthetic.yaml")
    synth = cfg.synth_config()
    assert (synth.grid, synth.d_audio, synth.d_visual, synth.noise_sigma, synth.instances, synth.groups) == (
        (17, 17), 128, 128, 0.1, 4000, 20
    )
    start = time.perf_counter()
    data = synth_generate(synth)
    tc = cfg.train_config()
    scf = cross_validate(data, "independent", 5, tc, lambda s: cfg.make_fuser(data.dims, s), label="scf")
    concat = cross_validate(data, "independent", 5, tc, lambda s: ConcatBaseline(), label="concat")
    elapsed = time.perf_counter() - start
    comparable = concat.held_out == scf.held_out and len(concat.accuracies) == len(scf.accuracies) == 5
    diff = scf.mean - concat.mean
    direction = "SCF above concat" if diff > 0 else "SCF below concat" if diff < 0 else "SCF equal to concat"
    print(scf.table() + concat.table())
    acceptance(
        6, "SCF+MLP >= 95% under 5-fold group-independent CV, concat baseline on the same folds, < 15 min",
        scf.mean >= FUSION_TARGET and comparable and elapsed < FUSION_BUDGET_S,
        f"SCF {scf.summary()}, concat {concat.summary()}, {direction} by {100 * abs(diff):.2f} points, "
        f"{elapsed / 60:.1f} min (< 15)",
    )


def test_criterion_7_spectrogram(acceptance, tmp_path):
    rate = 16000
    t = np.arange(rate) / rate
    write_wav(tmp_path / "tone.wav", 0.5 * np.sin(2 * np.pi * 1000.0 * t), rate)
    samples, got_rate = load_audio(tmp_path / "tone.wav")
    raw = spectrogram(samples, SpectrogramConfig(sample_rate=got_rate, normalization="none"))
    peaks = np.argmax(raw.frames, axis=1)
    noisy = samples + 0.05 * np.random.default_rng(7).standard_normal(rate)
    z = spectrogram(noisy, SpectrogramConfig()).frames
    mean_err = float(np.max(np.abs(z.mean(axis=0))))
    var_err = float(np.max(np.abs(z.var(axis=0) - 1.0)))
    ok = raw.frames.shape[0] == 98 and np.all(peaks == 32) and mean_err < ZSCORE_MEAN_TOL and var_err < ZSCORE_VAR_TOL
    acceptance(
        7, "spectrogram contract",
        bool(ok),
        f"{raw.frames.shape[0]} frames (== 98), peak bins {sorted(set(peaks.tolist()))} (== [32]), "
        f"|mean| {mean_err:.1e} (< 1e-9), |var-1| {var_err:.1e} (< 1e-6)",
    )


REPRO_CONFIG = """
seed: 11
output_dir: {out}
folds: 5
train:
  max_epochs: 2
  batch_size: 64
synth:
  instances: 1000
"""


def test_criterion_8_reproducibility(acceptance, tmp_path, capsys):
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        cfg = tmp_path / f"{run}.yaml"
        cfg.write_text(REPRO_CONFIG.format(out=out))
        assert main(["synth", "--config", str(cfg)]) == 0
        assert main(["train", "--config", str(cfg), "--data", str(out / "synth.scfe")]) == 0
        assert main(["eval", "--config", str(cfg), "--data", str(out / "synth.scfe")]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    first, second = outputs
    same = [name for name in first if first[name] == second.get(name)]
    acceptance(
        8, "two seeded synth -> train -> eval runs are byte-identical",
        set(first) == set(second) == {"synth.scfe", "model.scfc", "model.history.txt", "report.txt"}
        and len(same) == len(first),
        f"identical: {', '.join(same)}",
    )


def test_criterion_9_round_trip_and_leakage(acceptance):
    rng = np.random.default_rng(9)
    round_trips = 0
    for _ in range(100):
        n = int(rng.integers(0, 40))
        d_a, d_v = int(rng.integers(0, 20)), int(rng.integers(0, 20))
        alphabet = list("abcxyz") + ["é", "語", "_", "-"]
        data = EmbeddingDataset(
            rng.standard_normal((n, d_a)).astype(np.float32) * 10.0 ** rng.integers(-30, 30),
            rng.standard_normal((n, d_v)).astype(np.float32),
            rng.integers(0, 2, n),
            ["".join(rng.choice(alphabet, rng.integers(1, 6))) for _ in range(n)],
            [f"{i}-{''.join(rng.choice(alphabet, 3))}" for i in range(n)],
        )
        back = decode_dataset(encode_dataset(data))
        round_trips += int(back == data and encode_dataset(back) == encode_dataset(data))

    leaks = 0
    folds_checked = 0
    cfg = load_config(ROOT / "configs" / "synthetic.yaml")
    datasets = [synth_generate(cfg.synth_config())]
    for seed in range(5):
        n = 200
        datasets.append(
            EmbeddingDataset(
                np.zeros((n, 1)), np.zeros((n, 1)), rng.integers(0, 2, n),
                [f"s{g}" for g in rng.integers(0, 12, n)], [f"c{i}" for i in range(n)],
            )
        )
    for data in datasets:
        for k in (2, 5):
            for tr, te in fold_indices(data, "independent", split_groups(data, "independent", k, 0)):
                folds_checked += 1
                leaks += len({data.group_ids[i] for i in tr} & {data.group_ids[i] for i in te})
    acceptance(
        9, "SCFE round trip on 100 random datasets, no group leakage in independent folds",
        round_trips == 100 and leaks == 0,
        f"{round_trips}/100 exact round trips, {leaks} leaked groups over {folds_checked} folds",
    )
