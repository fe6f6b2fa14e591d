import numpy as np
import pytest
from hypothesis import given, strategies as st

from asvguard.corpus import LoadedTrial
from asvguard.detect import SingleDetector
from asvguard.metrics import (EvalReport, ScoreSet, SplitOverlapError, compute_eer, far_frr_at,
                              purification_tradeoff, read_tradeoff_csv, system_eval, tradeoff_csv)
from asvguard.purify import Purifier


def brute_force_eer(tgt, non):
    """Every midpoint, plus both ends; linear interpolation across the sign change of FAR - FRR."""
    u = np.unique(np.concatenate([tgt, non]))
    cands = np.concatenate([[u[0] - 1], (u[:-1] + u[1:]) / 2, [u[-1] + 1]])
    far = np.array([np.mean(non >= c) for c in cands])
    frr = np.array([np.mean(tgt < c) for c in cands])
    diff = far - frr
    zero = np.flatnonzero(diff == 0)
    if zero.size:
        return far[zero[0]]
    j = np.flatnonzero(diff > 0)[-1]
    w = diff[j] / (diff[j] - diff[j + 1])
    return far[j] + w * (far[j + 1] - far[j])


def test_eer_matches_brute_force_on_100_instances():
    rng = np.random.default_rng(0)
    for i in range(100):
        n_t, n_n = rng.integers(1, 120, 2)
        shift = rng.uniform(0, 3)
        tgt = rng.normal(shift, 1, n_t)
        non = rng.normal(0, 1, n_n)
        if i % 4 == 0:  # coarse scores force ties and exact crossings
            tgt, non = np.round(tgt, 1), np.round(non, 1)
        eer, _ = compute_eer(ScoreSet(tgt, non))
        assert abs(eer - brute_force_eer(tgt, non)) <= 1e-9


def test_eer_examples():
    assert compute_eer(ScoreSet([0.9, 0.8], [0.1, 0.2])) == (0.0, pytest.approx(0.5))
    assert compute_eer(ScoreSet([0.3, 0.5, 0.7], [0.3, 0.5, 0.7]))[0] == pytest.approx(0.5)


def test_eer_threshold_gives_eer():
    rng = np.random.default_rng(1)
    tgt, non = rng.normal(2, 1, 500), rng.normal(0, 1, 500)
    eer, tau = compute_eer(ScoreSet(tgt, non))
    far, frr = far_frr_at(ScoreSet(tgt, non), tau)
    assert abs(far - eer) < 0.01 and abs(frr - eer) < 0.01


def test_eer_empty_class():
    with pytest.raises(ValueError):
        compute_eer(ScoreSet([0.5], []))


def test_far_frr_examples():
    s = ScoreSet([0.6, 0.4], [0.5, 0.3])
    assert far_frr_at(s, 0.45) == (0.5, 0.5)
    assert far_frr_at(s, 0.0) == (1.0, 0.0)
    assert far_frr_at(s, 1.0) == (0.0, 1.0)
    assert far_frr_at(s, 0.5) == (0.5, 0.5)  # ties accept


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30), st.lists(st.floats(-1, 1), min_size=1, max_size=30),
       st.floats(-1.1, 1.1), st.floats(-1.1, 1.1))
def test_far_frr_monotone(t, n, a, b):
    lo, hi = sorted((a, b))
    s = ScoreSet(t, n)
    far_lo, frr_lo = far_frr_at(s, lo)
    far_hi, frr_hi = far_frr_at(s, hi)
    assert far_hi <= far_lo and frr_hi >= frr_lo


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=40), st.lists(st.floats(-1, 1), min_size=1, max_size=40))
def test_eer_in_unit_interval(t, n):
    assert 0 <= compute_eer(ScoreSet(t, n))[0] <= 1


def _system_inputs():
    d_gen = np.linspace(0.0, 0.01, 100)
    cal_ids = [f"c{i}" for i in range(100)]
    gen_eval = ([f"g{i}" for i in range(20)], np.linspace(0.0, 0.01, 20))
    scores = np.array([0.99, 0.99, 0.5, 0.99, 0.2, 0.995])
    is_target = np.array([False, False, False, True, True, True])
    return d_gen, cal_ids, gen_eval, scores, is_target


def test_system_perfect_detector():
    d_gen, cal, gen, scores, tgt = _system_inputs()
    det = SingleDetector.fit("p", d_gen, 0.01)
    adv = ([f"a{i}" for i in range(6)], np.full(6, 1.0), scores, tgt)
    rep = system_eval(det, cal, gen, adv, tau_asv=0.9)
    assert len(rep.rows) == 3
    for r in rep.rows:
        assert r.adv_tdr == 1.0 and r.system_adv_far == 0.0 and r.system_adv_frr == 1.0


def test_system_silent_detector_reduces_to_asv():
    d_gen, cal, gen, scores, tgt = _system_inputs()
    det = SingleDetector.fit("p", d_gen, 0.01)
    adv = ([f"a{i}" for i in range(6)], np.zeros(6), scores, tgt)
    rep = system_eval(det, cal, gen, adv, tau_asv=0.9, gen_fdr_grid=(0.01,))
    far, frr = far_frr_at(ScoreSet(scores[tgt], scores[~tgt]), 0.9)
    assert rep.rows[0].adv_tdr == 0.0
    assert (rep.rows[0].system_adv_far, rep.rows[0].system_adv_frr) == (far, frr)


@given(st.lists(st.floats(0, 0.05), min_size=6, max_size=6))
def test_system_far_never_above_asv(d_adv):
    d_gen, cal, gen, scores, tgt = _system_inputs()
    det = SingleDetector.fit("p", d_gen, 0.01)
    rep = system_eval(det, cal, gen, ([f"a{i}" for i in range(6)], d_adv, scores, tgt), tau_asv=0.9)
    asv_far = far_frr_at(ScoreSet(scores[tgt], scores[~tgt]), 0.9)[0]
    assert all(r.system_adv_far <= asv_far for r in rep.rows)


def test_system_overlap_and_grid_errors():
    d_gen, cal, gen, scores, tgt = _system_inputs()
    det = SingleDetector.fit("p", d_gen, 0.01)
    adv = (["a0", "c3", "a2", "a3", "a4", "a5"], np.zeros(6), scores, tgt)
    with pytest.raises(SplitOverlapError):
        system_eval(det, cal, gen, adv, 0.9)
    adv = ([f"a{i}" for i in range(6)], np.zeros(6), scores, tgt)
    with pytest.raises(ValueError):
        system_eval(det, cal, gen, adv, 0.9, gen_fdr_grid=(1.5,))


def test_system_flags_k0():
    d_gen, cal, gen, scores, tgt = _system_inputs()
    det = SingleDetector.fit("p", d_gen, 0.01)
    rep = system_eval(det, cal, gen, ([f"a{i}" for i in range(6)], np.zeros(6), scores, tgt), 0.9)
    assert [r.no_flag_budget for r in rep.rows] == [False, True, True]


def test_report_json_sorted_and_text():
    d_gen, cal, gen, scores, tgt = _system_inputs()
    det = SingleDetector.fit("p", d_gen, 0.01)
    row = system_eval(det, cal, gen, ([f"a{i}" for i in range(6)], np.zeros(6), scores, tgt), 0.9)
    rep = EvalReport(0.02, 0.98, 0.9, 0.95, {"target": 100}, (row,), {}, {"x": 1.0})
    d = rep.to_dict()
    assert {"gen_eer", "adv_far", "adv_frr", "detectors"} <= set(d)
    assert rep.to_json() == rep.to_json()
    assert "(k=0)" in rep.to_text() and "non-binding" in rep.to_text()


def test_tradeoff_pass_through_matches_plain_eer(model, voices):
    trials = [LoadedTrial("a", voices[0][0], voices[0][1], True),
              LoadedTrial("b", voices[0][0], voices[1][1], False),
              LoadedTrial("c", voices[1][0], voices[1][2], True),
              LoadedTrial("d", voices[1][0], voices[0][2], False)]
    plain = compute_eer(ScoreSet([model.score(t.test, t.enroll) for t in trials if t.is_target],
                                 [model.score(t.test, t.enroll) for t in trials if not t.is_target]))[0]
    gen, adv = purification_tradeoff(model, None, trials, trials)
    assert gen == plain == adv
    gen_q, _ = purification_tradeoff(model, Purifier("quantize", q=16), trials, trials)
    assert 0 <= gen_q <= 1


def test_tradeoff_csv_round_trip():
    rows = [("quantize:q=16", 0.02, 1.0), ("gaussian_noise:snr=25:seed=3", 0.01, 0.97)]
    text = tradeoff_csv(rows)
    assert text.splitlines()[0] == "purifier,gen_eer,adv_eer"
    assert read_tradeoff_csv(text) == rows
    with pytest.raises(ValueError):
        read_tradeoff_csv("a,b\n")
