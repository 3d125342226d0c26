import math

import numpy as np
import pytest

from myodyn.config import default_config
from myodyn.data import (MotionProfile, PreprocessConfig, TrialFormatError, TrialMatrix, load_manifest, load_trial,
                         lowpass, preprocess_semg, save_trial, synthesize_trial, trial_paths)

CFG = default_config()


@pytest.fixture(scope="module")
def short_trial():
    prof = CFG.profile()
    prof.duration, prof.settle = 2.0, 0.5
    return synthesize_trial(prof, CFG.joint_model(), CFG.true_params(), CFG.data.true_A, seed=4)


def test_lowpass_passband_gain():
    fs = 1000.0
    t = np.arange(0, 4, 1 / fs)
    y = lowpass(np.sin(2 * np.pi * 5 * t), fs)
    mid = slice(1000, 3000)
    # forward-backward 4th-order Butterworth: |H|^2 = 1 / (1 + (f/fc)^8)
    assert np.max(np.abs(y[mid])) == pytest.approx(1 / (1 + (5 / 6) ** 8), rel=0.01)


def test_rectified_sine_envelope_is_mean_absolute_value():
    fs = 2000.0
    t = np.arange(0, 3, 1 / fs)
    env = preprocess_semg(0.4 * np.sin(2 * np.pi * 100 * t), fs)
    assert np.mean(env[1500:4500]) == pytest.approx(2 * 0.4 / np.pi, rel=0.01)


def test_mvc_normalization_and_clamp():
    fs = 2000.0
    t = np.arange(0, 2, 1 / fs)
    raw = np.column_stack([np.sin(2 * np.pi * 100 * t), 3 * np.sin(2 * np.pi * 100 * t)])
    env = preprocess_semg(raw, fs, PreprocessConfig(mvc=[1.0, 1.0]))
    assert env.max() == 1.0 and env.min() >= 0.0
    half = preprocess_semg(raw, fs, PreprocessConfig(mvc=[2 / np.pi, 6 / np.pi]))
    assert np.mean(half[1000:3000]) == pytest.approx(1.0, abs=0.02)


def test_filter_corners_below_nyquist():
    with pytest.raises(ValueError):
        preprocess_semg(np.zeros(100), 500.0)


def test_profile_validation():
    with pytest.raises(ValueError):
        MotionProfile(speed=0.0)
    with pytest.raises(ValueError):
        MotionProfile(amplitude=[0.9] * 5, baseline=[0.2] * 5)
    with pytest.raises(ValueError):
        MotionProfile(settle=-1.0)


def test_profile_excitation_range():
    prof = MotionProfile()
    e = prof.excitation(np.linspace(0, 4, 400))
    assert e.shape == (400, 5)
    np.testing.assert_allclose(e.min(0), prof.baseline, atol=1e-3)
    np.testing.assert_allclose(e.max(0), np.add(prof.baseline, prof.amplitude), atol=1e-3)


def test_synthesis_deterministic_and_consistent(short_trial):
    trial, manifest = short_trial
    again, _ = synthesize_trial(MotionProfile(**manifest["profile"]), CFG.joint_model(), CFG.true_params(),
                                CFG.data.true_A, seed=4)
    np.testing.assert_array_equal(trial.q, again.q)
    assert trial.t[0] == 0.0 and len(trial) == 2001
    assert trial.names == CFG.names
    assert manifest["A"] == CFG.data.true_A


def test_settle_drops_transient(short_trial):
    trial, _ = short_trial
    assert trial.q[0] != 0.0  # recording starts mid-motion, not at rest


def test_angle_follows_drive_frequency():
    prof = CFG.profile()
    prof.duration = 8.0
    trial, _ = synthesize_trial(prof, CFG.joint_model(), CFG.true_params(), CFG.data.true_A)
    spec = np.abs(np.fft.rfft(trial.q - trial.q.mean()))
    freqs = np.fft.rfftfreq(len(trial.q), trial.dt)
    assert freqs[np.argmax(spec)] == pytest.approx(prof.speed, abs=0.13)


def test_noise_level_matches_snr():
    prof = CFG.profile()
    prof.duration, prof.settle, prof.snr_db = 1.0, 0.0, 20.0
    noisy, _ = synthesize_trial(prof, CFG.joint_model(), CFG.true_params(), CFG.data.true_A, seed=1)
    clean = prof.excitation(noisy.t)
    snr = 20 * np.log10(np.sqrt(np.mean(clean ** 2, 0)) / np.sqrt(np.mean((noisy.e - clean) ** 2, 0)))
    np.testing.assert_allclose(snr, 20.0, atol=0.5)  # clipping at 0 perturbs it slightly
    assert noisy.e.min() >= 0


def test_round_trip_exact(tmp_path, short_trial):
    trial, manifest = short_trial
    paths = save_trial(trial, tmp_path / "run", manifest)
    assert [p.name for p in paths] == ["run.csv", "run_forces.csv", "run_manifest.json"]
    back = load_trial(tmp_path / "run")
    for k in ("t", "e", "q", "forces"):
        np.testing.assert_array_equal(getattr(back, k), getattr(trial, k))
    assert back.names == trial.names
    assert load_manifest(tmp_path / "run")["seed"] == 4
    header = (tmp_path / "run.csv").read_text().splitlines()[0]
    assert header == "t,e_FCR,e_FCU,e_ECRL,e_ECRB,e_ECU,q"


def test_trial_paths_accept_directory_and_suffix(tmp_path):
    assert trial_paths(tmp_path)[0] == tmp_path / "trial.csv"
    assert trial_paths(tmp_path / "a.csv")[1] == tmp_path / "a_forces.csv"


def _write(path, text):
    path.write_text(text)
    return path.with_suffix("")


def test_missing_column_named(tmp_path):
    stem = _write(tmp_path / "t.csv", "t,e_FCR,e_FCU\n0,0.1,0.2\n")
    with pytest.raises(TrialFormatError, match="'q'"):
        load_trial(stem)
    stem = _write(tmp_path / "u.csv", "t,e_FCR,q\n0,0.1,0.2\n")
    with pytest.raises(TrialFormatError, match="e_FCU"):
        load_trial(stem, names=["FCR", "FCU"])


def test_non_uniform_time_reported(tmp_path):
    stem = _write(tmp_path / "t.csv", "t,e_A,q\n0,0.1,0\n0.001,0.1,0\n0.0025,0.1,0\n")
    with pytest.raises(TrialFormatError, match="non-uniform time step at row 2"):
        load_trial(stem)
    stem = _write(tmp_path / "u.csv", "t,e_A,q\n0,0.1,0\n0,0.1,0\n")
    with pytest.raises(TrialFormatError, match="strictly increasing"):
        load_trial(stem)


def test_bad_cells_located(tmp_path):
    stem = _write(tmp_path / "t.csv", "t,e_A,q\n0,0.1,0\n0.001,abc,0\n")
    with pytest.raises(TrialFormatError, match=r"t.csv:3:2"):
        load_trial(stem)
    stem = _write(tmp_path / "u.csv", "t,e_A,q\n0,0.1\n")
    with pytest.raises(TrialFormatError, match="expected 3 fields"):
        load_trial(stem)
    stem = _write(tmp_path / "v.csv", "t,e_A,q\n0,1.5,0\n0.001,0.1,0\n")
    with pytest.raises(TrialFormatError, match=r"\[0, 1\]"):
        load_trial(stem)
    stem = _write(tmp_path / "w.csv", "")
    with pytest.raises(TrialFormatError, match="empty"):
        load_trial(stem)


def test_trial_matrix_shapes():
    with pytest.raises(ValueError):
        TrialMatrix(np.arange(3.0), np.zeros((3, 2)), np.zeros(3), ["a"])
    tm = TrialMatrix(np.arange(3.0), np.zeros((3, 1)), np.zeros(3), ["a"])
    assert tm.matrix().shape == (3, 3)
    assert len(tm.subset([0, 2])) == 2
    assert math.isclose(tm.sample_rate, 1.0)
