"""End-to-end acceptance checks.

One test per criterion, in order; each prints a single summary line with
the measured value next to its bound.  Training-based checks cache their
runs under .acceptance_cache/ at the repository root, so a re-run of the
suite replays from disk instead of retraining.
"""

import csv
import json
import os
import shutil
import time
from dataclasses import replace

import numpy as np
import pytest

from emphnet.attention import SSEMConfig, TSEMConfig
from emphnet.config import (RunConfig, apply_variant, build_corpus, build_model,
                            config_hash, serialize_config)
from emphnet.ctc import (ctc_brute_force_oracle, ctc_loss, edit_alignment,
                         min_frames, wer)
from emphnet.flops import branch_sweep, count_model
from emphnet.gradcheck import run_gradcheck
from emphnet.network import full_scale_model
from emphnet.synth import center_crop, generate_dataset
from emphnet.tensor import Tensor
from emphnet.train import AdamState, evaluate, load_checkpoint, restore, train_run

pytestmark = pytest.mark.acceptance

CACHE = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                     ".acceptance_cache")

RECOGNITION_EPOCHS = 40
RECOGNITION_SEEDS = (0, 1, 2)


def recognition_config(variant: str, seed: int) -> RunConfig:
    cfg = RunConfig()
    cfg = replace(cfg, train=replace(cfg.train, epochs=RECOGNITION_EPOCHS),
                  run=replace(cfg.run, seed=seed))
    return apply_variant(cfg, variant)


def _read_metrics(run_dir: str) -> list[dict]:
    with open(os.path.join(run_dir, "metrics.csv"), newline="") as fh:
        return [{"epoch": int(r["epoch"]), "split": r["split"],
                 "loss": float(r["loss"]), "wer": float(r["wer"])}
                for r in csv.DictReader(fh)]


def _run_complete(run_dir: str, cfg: RunConfig, epochs: int) -> bool:
    snap = os.path.join(run_dir, "config.snapshot")
    stamp = os.path.join(run_dir, "elapsed.json")
    ckpt = os.path.join(run_dir, "checkpoints", f"epoch_{epochs - 1}.bin")
    try:
        if open(snap).read() != serialize_config(cfg):
            return False
        if not os.path.exists(stamp) or not os.path.exists(ckpt):
            return False
        rows = _read_metrics(run_dir)
    except OSError:
        return False
    return any(r["epoch"] == epochs - 1 and r["split"] == "dev" for r in rows)


def _ensure_recognition_run(variant: str, seed: int) -> str:
    """Train (or reuse) one cached recognition run; returns its directory."""
    cfg = recognition_config(variant, seed)
    run_dir = os.path.join(CACHE, f"{variant}_s{seed}")
    if _run_complete(run_dir, cfg, RECOGNITION_EPOCHS):
        return run_dir
    shutil.rmtree(run_dir, ignore_errors=True)
    os.makedirs(run_dir)
    with open(os.path.join(run_dir, "config.snapshot"), "w") as fh:
        fh.write(serialize_config(cfg))
    model = build_model(cfg)
    train_set, dev_set = build_corpus(cfg)
    t0 = time.monotonic()
    train_run(model, train_set, dev_set, cfg.train, cfg.augment, run_dir,
              seed=seed, config_hash=config_hash(cfg))
    elapsed = time.monotonic() - t0
    with open(os.path.join(run_dir, "elapsed.json"), "w") as fh:
        json.dump({"seconds": elapsed}, fh)
    return run_dir


@pytest.fixture(scope="session")
def recognition_runs():
    runs = {}
    for variant in ("sen", "baseline"):
        for seed in RECOGNITION_SEEDS:
            run_dir = _ensure_recognition_run(variant, seed)
            rows = _read_metrics(run_dir)
            elapsed = json.load(open(os.path.join(run_dir, "elapsed.json")))["seconds"]
            runs[(variant, seed)] = {"dir": run_dir, "rows": rows, "elapsed": elapsed}
    return runs


@pytest.fixture(scope="session")
def trained_sen_report(recognition_runs):
    """Attention-collecting evaluation of the trained seed-0 sen model."""
    cfg = recognition_config("sen", 0)
    run_dir = recognition_runs[("sen", 0)]["dir"]
    ckpt = load_checkpoint(os.path.join(run_dir, "checkpoints",
                                        f"epoch_{RECOGNITION_EPOCHS - 1}.bin"))
    model = build_model(cfg)
    restore(model, AdamState(model.params), ckpt)
    _, dev_set = build_corpus(cfg)
    return evaluate(model, dev_set, cfg.augment, collect_attention=True)


def test_c01_gradient_suite():
    t0 = time.monotonic()
    results = run_gradcheck(seeds=range(20), tol=1e-4)
    elapsed = time.monotonic() - t0
    worst = max(results, key=lambda r: r.max_rel_err)
    line = (f"criterion 1: {sum(r.passed for r in results)}/{len(results)} operator "
            f"checks < 1e-4 (worst {worst.max_rel_err:.2e} in {worst.name}), "
            f"{elapsed:.1f}s < 120s")
    print(line)
    assert all(r.passed for r in results), line
    assert elapsed < 120.0, line


def test_c02_zero_init_identity():
    cfg = RunConfig()
    sen = build_model(replace(cfg, run=replace(cfg.run, seed=5)))
    base = build_model(apply_variant(replace(cfg, run=replace(cfg.run, seed=5)),
                                     "baseline"))
    sen.eval_mode()
    base.eval_mode()
    clips = generate_dataset(cfg.data, 10, seed=123)
    same = 0
    for clip in clips:
        s = center_crop(clip, cfg.augment)
        a = sen.forward_clip(s.frames).data
        b = base.forward_clip(s.frames).data
        same += int(a.tobytes() == b.tobytes())
    line = f"criterion 2: zero-init output identical on {same}/10 clips (bitwise)"
    print(line)
    assert same == 10, line


def test_c03_ctc_equivalence():
    t0 = time.monotonic()
    worst = 0.0
    rng = np.random.default_rng(2024)
    done = 0
    while done < 200:
        t = int(rng.integers(1, 9))
        vocab = int(rng.integers(1, 5))
        length = int(rng.integers(1, 5))
        labels = [int(v) for v in rng.integers(1, vocab + 1, size=length)]
        if min_frames(labels) > t:
            continue
        logits = rng.standard_normal((t, vocab + 1))
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        got = ctc_loss(Tensor(log_probs), labels, t).item()
        want = ctc_brute_force_oracle(log_probs, labels, t)
        worst = max(worst, abs(got - want))
        done += 1
    elapsed = time.monotonic() - t0
    line = (f"criterion 3: 200 random lattices, max |loss - enumeration| = "
            f"{worst:.2e} < 1e-9, {elapsed:.1f}s < 60s")
    print(line)
    assert worst < 1e-9, line
    assert elapsed < 60.0, line


def _levenshtein(a: list, b: list) -> int:
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] != b[j - 1]))
        prev = cur
    return prev[len(b)]


def test_c04_wer_oracle():
    rng = np.random.default_rng(99)
    mismatches = 0
    for _ in range(1000):
        ref = [int(v) for v in rng.integers(1, 5, size=int(rng.integers(1, 9)))]
        hyp = [int(v) for v in rng.integers(1, 5, size=int(rng.integers(0, 9)))]
        sub, ins, dele = edit_alignment(hyp, ref)
        mismatches += int(sub + ins + dele != _levenshtein(hyp, ref))
    identity = wer([([1, 2, 3], [1, 2, 3])])
    one_sub = wer([([1, 2, 3, 9], [1, 2, 3, 4])])
    line = (f"criterion 4: 1000 alignments, {mismatches} oracle mismatches; "
            f"identity {identity:.0f}%, one sub over 4 = {one_sub:.0f}%")
    print(line)
    assert mismatches == 0, line
    assert identity == 0.0 and one_sub == 25.0, line


def test_c05_overfit_four_sentences():
    cfg = RunConfig()
    cfg = replace(cfg, corpus=replace(cfg.corpus, train_sentences=4, dev_sentences=1),
                  train=replace(cfg.train, epochs=200))
    run_dir = os.path.join(CACHE, "overfit")
    shutil.rmtree(run_dir, ignore_errors=True)
    model = build_model(cfg)
    train_set, dev_set = build_corpus(cfg)
    t0 = time.monotonic()
    zero_epoch = None
    stop = 0
    while zero_epoch is None and stop < cfg.train.epochs:
        stop = min(stop + 25, cfg.train.epochs)
        train_run(model, train_set, dev_set, cfg.train, cfg.augment, run_dir,
                  seed=0, config_hash=config_hash(cfg), stop_after=stop,
                  resume=stop > 25)
        for row in _read_metrics(run_dir):
            if row["split"] == "train" and row["wer"] == 0.0:
                zero_epoch = row["epoch"]
                break
    elapsed = time.monotonic() - t0
    line = (f"criterion 5: train WER 0% at epoch "
            f"{zero_epoch if zero_epoch is not None else '>200'} (<= 200), "
            f"{elapsed:.0f}s < 600s")
    print(line)
    assert zero_epoch is not None, line
    assert elapsed < 600.0, line


def test_c06_synthetic_recognition(recognition_runs):
    finals = {}
    for (variant, seed), run in recognition_runs.items():
        dev = [r for r in run["rows"] if r["split"] == "dev"]
        best = min(r["wer"] for r in dev)
        final = [r["wer"] for r in dev if r["epoch"] == RECOGNITION_EPOCHS - 1][0]
        finals[(variant, seed)] = final
        assert best <= 10.0, (f"{variant} seed {seed}: best dev WER {best:.2f}% "
                              f"> 10% within {RECOGNITION_EPOCHS} epochs")
        assert run["elapsed"] < 1800.0, (f"{variant} seed {seed}: "
                                         f"{run['elapsed']:.0f}s >= 30 min")
    sen_mean = float(np.mean([finals[("sen", s)] for s in RECOGNITION_SEEDS]))
    base_mean = float(np.mean([finals[("baseline", s)] for s in RECOGNITION_SEEDS]))
    line = (f"criterion 6: all runs reach dev WER <= 10% within "
            f"{RECOGNITION_EPOCHS} epochs; 3-seed mean final dev WER "
            f"sen {sen_mean:.2f}% <= baseline {base_mean:.2f}%")
    print(line)
    assert sen_mean <= base_mean, line


def test_c07_spatial_attention_concentration(trained_sen_report):
    cfg = recognition_config("sen", 0)
    last = f"stage{len(cfg.model.stage_channels) - 1}"
    keys = [k for k in trained_sen_report.spatial
            if k.startswith(last) and k.endswith(".ssem")]
    assert keys, "no final-stage spatial gates collected"
    inside = float(np.mean([trained_sen_report.spatial[k][0] for k in keys]))
    outside = float(np.mean([trained_sen_report.spatial[k][1] for k in keys]))
    ratio = inside / outside
    line = (f"criterion 7: final-stage gate mean inside regions {inside:.4f} vs "
            f"outside {outside:.4f}, ratio {ratio:.3f} >= 1.2")
    print(line)
    assert ratio >= 1.2, line


def test_c08_temporal_emphasis(trained_sen_report):
    rep = trained_sen_report
    assert rep.temporal_eligible > 0, "no clips had both motion and idle frames"
    frac = rep.temporal_pooled_wins / rep.temporal_eligible
    line = (f"criterion 8: motion frames outgate idle frames on "
            f"{rep.temporal_pooled_wins}/{rep.temporal_eligible} dev clips "
            f"({100 * frac:.1f}% >= 80%)")
    print(line)
    assert frac >= 0.8, line


def test_c09_flops_overhead():
    mcfg = full_scale_model()
    scfg, tcfg = SSEMConfig(), TSEMConfig()
    sweep = branch_sweep(mcfg, scfg, tcfg)
    costs = [c for _, c in sweep]
    assert all(a < b for a, b in zip(costs, costs[1:])), \
        f"criterion 9: overhead not strictly increasing with branches: {sweep}"
    ratio = count_model(mcfg, scfg, tcfg).overhead_ratio
    line = (f"criterion 9: branch ordering ok {costs}; combined overhead "
            f"{100 * ratio:.3f}% of backbone vs required < 0.2%")
    print(line)
    assert ratio < 0.002, line


def test_c10_determinism_and_resume(tmp_path):
    cfg = RunConfig()
    cfg = replace(cfg, corpus=replace(cfg.corpus, train_sentences=8, dev_sentences=2),
                  train=replace(cfg.train, epochs=3))
    train_set, dev_set = build_corpus(cfg)

    def fresh(run_dir, stop_after=None, resume=False, model=None):
        model = model or build_model(cfg)
        train_run(model, train_set, dev_set, cfg.train, cfg.augment, str(run_dir),
                  seed=4, config_hash=config_hash(cfg), stop_after=stop_after,
                  resume=resume)
        return model

    m_a = fresh(tmp_path / "a")
    m_b = fresh(tmp_path / "b")
    csv_a = (tmp_path / "a" / "metrics.csv").read_bytes()
    csv_b = (tmp_path / "b" / "metrics.csv").read_bytes()

    fresh(tmp_path / "c", stop_after=1)
    m_c = fresh(tmp_path / "c", resume=True)
    csv_c = (tmp_path / "c" / "metrics.csv").read_bytes()

    same_metrics = csv_a == csv_b
    resumed_metrics = csv_a == csv_c
    resumed_params = m_a.param_bytes() == m_c.param_bytes()
    repeat_params = m_a.param_bytes() == m_b.param_bytes()
    line = (f"criterion 10: same-seed metrics identical={same_metrics}, "
            f"resume metrics identical={resumed_metrics}, resume parameters "
            f"bitwise={resumed_params}")
    print(line)
    assert same_metrics and repeat_params, line
    assert resumed_metrics and resumed_params, line
