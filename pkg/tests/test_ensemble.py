import math

import numpy as np
import pytest

from icmdrift.betting import BetDecision
from icmdrift.ensemble import (
    Ensemble,
    EnsembleConfig,
    OutOfOrderError,
    RunRecord,
    majority_vote,
    run,
)
from icmdrift.forest import train
from icmdrift.streams import (
    SEA_SCHEMA,
    STAGGER_SCHEMA,
    ConceptSchedule,
    DataError,
    LabeledInstance,
    NoiseSpec,
    generate_sea,
    generate_stagger,
    inject_label_noise,
)


class ScriptedBets:
    """Betting stand-in that returns a fixed bet for each timestamp."""

    def __init__(self, script, clock):
        self.script = script
        self.clock = clock
        self.resets = []

    def step(self, p):
        return BetDecision(self.script.get(self.clock[0], 1.0), True, 0)

    def reset(self):
        self.resets.append(self.clock[0])


# --- majority vote ---------------------------------------------------------------

def test_vote_mode():
    assert majority_vote([(1, 1), (2, 1), (3, 1), (4, 0)]) == 1


def test_vote_tie_by_mean_posterior():
    votes = [(1, 1), (2, 1), (3, 0), (4, 0)]
    assert majority_vote(votes, [0.9, 0.9, 0.6, 0.6]) == 1
    assert majority_vote(votes, [0.6, 0.6, 0.9, 0.9]) == 0
    assert majority_vote(votes, [0.7, 0.7, 0.7, 0.7]) == 0  # then the smaller class


def test_vote_empty():
    assert majority_vote([]) is None


# --- hand trace ------------------------------------------------------------------

def test_single_pipeline_hand_trace():
    """theta=3; bets drive S to 0.5, 1, 3, 20, 30, 60, 120 over t=4..10.

    Expected: cold-start training at t=3 on z1..z3, predictions from t=4,
    alarm at t=10 with d=7 (last S<10 at t=6), retraining at t=10 on z7..z9,
    score history cleared and martingale reset at the alarm, predictions
    again from t=11 with a fresh history (first p-value equals u).
    """
    stream = list(generate_stagger(14, ConceptSchedule(("a",), 100), seed=2))
    ens = Ensemble(EnsembleConfig(thetas=(3,), seed=4), STAGGER_SCHEMA)
    pipe = ens.pipelines[0]
    clock = [0]
    bets = ScriptedBets({4: 0.5, 5: 2.0, 6: 3.0, 7: 20 / 3, 8: 1.5, 9: 2.0, 10: 2.0}, clock)
    pipe.betting = bets
    table = []
    for z in stream:
        clock[0] = z.timestamp
        u_before = pipe.tiebreak._pos
        res = ens.step(z)
        table.append(
            (
                z.timestamp,
                res.available,
                len(pipe.scores),
                round(math.exp(pipe.martingale.log_s), 9),
                bool(res.alarms),
                tuple(res.retrained),
            )
        )
        if z.timestamp == 11:
            # one fresh score: p-value is the tie-breaking draw itself
            assert pipe.scores.scores() == [pipe.scores.scores()[0]]
            assert u_before + 1 == pipe.tiebreak._pos
    expected = [
        # t, available, |H|, S after step, alarm, retrained
        (1, False, 0, 1.0, False, ()),
        (2, False, 0, 1.0, False, ()),
        (3, False, 0, 1.0, False, (1,)),
        (4, True, 1, 0.5, False, ()),
        (5, True, 2, 1.0, False, ()),
        (6, True, 3, 3.0, False, ()),
        (7, True, 4, 20.0, False, ()),
        (8, True, 5, 30.0, False, ()),
        (9, True, 6, 60.0, False, ()),
        (10, True, 0, 1.0, True, (1,)),
        (11, True, 1, 1.0, False, ()),
        (12, True, 2, 1.0, False, ()),
        (13, True, 3, 1.0, False, ()),
        (14, True, 4, 1.0, False, ()),
    ]
    assert table == expected
    assert pipe.training_windows == [(3, 1, 3), (10, 7, 3)]
    assert pipe.d == 7
    # the retrained model is exactly the model fit on z7..z9
    ref = train(stream[6:9], STAGGER_SCHEMA, 40, pipe.model.seed)
    assert pipe.model.to_json() == ref.to_json()
    # betting state was reset at the alarm (and at each retraining)
    assert 10 in bets.resets


def test_alarm_anchor_reported_in_vote_result():
    stream = list(generate_stagger(12, ConceptSchedule(("a",), 100), seed=2))
    ens = Ensemble(EnsembleConfig(thetas=(3,), seed=4), STAGGER_SCHEMA)
    clock = [0]
    ens.pipelines[0].betting = ScriptedBets({5: 20.0, 6: 20.0}, clock)
    events = []
    for z in stream:
        clock[0] = z.timestamp
        events += ens.step(z).alarms
    # S = 20 at t=5 (first >= r), 400 at t=6: last S<10 at t=4, so d=5
    assert [(i, ev.at, ev.anchor) for i, ev in events] == [(1, 6, 5)]
    assert ens.pipelines[0].training_windows[-1] == (7, 5, 3)


# --- step semantics ------------------------------------------------------------------

def test_first_step_unavailable():
    ens = Ensemble(EnsembleConfig(), STAGGER_SCHEMA)
    z = next(iter(generate_stagger(1, seed=0)))
    assert not ens.step(z).available


def test_cold_start_activation_order():
    rec = run(generate_stagger(1200, seed=1), EnsembleConfig(seed=1), STAGGER_SCHEMA)
    first = [int(np.argmax(rec.preds[:, j] >= 0)) + 1 for j in range(10)]
    assert first == [101, 201, 301, 401, 501, 601, 701, 801, 901, 1001]
    assert rec.ensemble[99] == -1 and rec.ensemble[100] >= 0


def test_out_of_order_rejected():
    z = ("small", "red", "circle")
    for second in (5, 4, 7):
        ens = Ensemble(EnsembleConfig(thetas=(3,)), STAGGER_SCHEMA)
        ens.step(LabeledInstance(5, z, 1))
        with pytest.raises(OutOfOrderError):
            ens.step(LabeledInstance(second, z, 1))


def test_stream_may_start_after_one():
    stream = [z._replace(timestamp=z.timestamp + 40) for z in generate_stagger(10, seed=1)]
    rec = run(stream, EnsembleConfig(thetas=(3,)), STAGGER_SCHEMA)
    assert rec.training_windows[1][0] == (43, 41, 3)
    assert rec.preds[3, 0] >= 0 and rec.preds[2, 0] < 0


def test_unknown_label_is_data_error():
    ens = Ensemble(EnsembleConfig(thetas=(3,)), STAGGER_SCHEMA)
    with pytest.raises(DataError):
        ens.step(LabeledInstance(1, ("small", "red", "circle"), 7))


def test_empty_stream_gives_empty_record():
    rec = run([], EnsembleConfig(), STAGGER_SCHEMA)
    assert len(rec) == 0 and rec.preds.shape == (0, 10)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(thetas=())
    with pytest.raises(ValueError):
        EnsembleConfig(r=1.0)
    with pytest.raises(ValueError):
        EnsembleConfig(betting="nope")


# --- whole-run invariants -------------------------------------------------------------

@pytest.fixture(scope="module")
def noisy_stagger_record():
    stream = list(
        inject_label_noise(
            generate_stagger(8000, ConceptSchedule(("a", "b", "c", "d"), 2000), seed=3),
            NoiseSpec(0.1, seed=3, mode="randomize"),
        )
    )
    cfg = EnsembleConfig(thetas=(100, 200, 300), seed=3)
    return stream, cfg, run(stream, cfg, STAGGER_SCHEMA)


def test_block_run_equals_stepwise(noisy_stagger_record):
    stream, cfg, rec = noisy_stagger_record
    ens = Ensemble(cfg, STAGGER_SCHEMA)
    from icmdrift.ensemble import _Recorder

    ens._recorder = _Recorder(3)
    for z in stream:
        ens.step(z)
    stepwise = ens._recorder.finish(ens)
    assert rec.same_as(stepwise)


def test_block_run_equals_stepwise_numeric():
    stream = list(generate_sea(3000, ConceptSchedule(("a", "d"), 1500, cycle=False), seed=5))
    cfg = EnsembleConfig(thetas=(150, 300), seed=5)
    a = Ensemble(cfg, SEA_SCHEMA).run(stream, block=97)
    b = Ensemble(cfg, SEA_SCHEMA).run(stream, block=1)
    assert a.same_as(b)


def test_run_is_deterministic(noisy_stagger_record):
    stream, cfg, rec = noisy_stagger_record
    assert rec.same_as(run(stream, cfg, STAGGER_SCHEMA))


def test_drifts_are_detected(noisy_stagger_record):
    _, _, rec = noisy_stagger_record
    assert rec.alarms.any()
    # every pipeline alarms at least once after the first drift
    assert all(rec.alarms[2000:, j].any() for j in range(3))


def test_retraining_windows_are_exact(noisy_stagger_record):
    stream, _, rec = noisy_stagger_record
    for idx, windows in rec.training_windows.items():
        theta = rec.thetas[idx - 1]
        for t, d, size in windows:
            assert size == theta
            assert d + theta - 1 <= t  # only past data is used
            row = t  # index of timestamp t + 1
            if row < len(rec):
                assert rec.preds[row, idx - 1] >= 0  # predicts right after retraining
                assert rec.retrains[t - 1, idx - 1]


def test_availability_accounting(noisy_stagger_record):
    _, _, rec = noisy_stagger_record
    no_voter = (rec.preds < 0).all(axis=1)
    assert np.array_equal(no_voter, rec.ensemble < 0)


def test_prediction_gap_after_alarm(noisy_stagger_record):
    _, _, rec = noisy_stagger_record
    for idx, ev in rec.alarm_events:
        j = idx - 1
        t = ev.at
        # predicted at the alarm step, then silent until the retraining step has passed
        assert rec.preds[t - 1, j] >= 0
        later = [w for w in rec.training_windows[idx] if w[0] >= t]
        if later and later[0][0] > t and t < len(rec):
            assert (rec.preds[t:later[0][0], j] < 0).all()


def test_pipelines_are_independent(noisy_stagger_record):
    stream, cfg, rec = noisy_stagger_record
    cut = EnsembleConfig(thetas=cfg.thetas, seed=cfg.seed, disabled=(2,))
    partial = run(stream, cut, STAGGER_SCHEMA)
    assert (partial.preds[:, 1] < 0).all()
    for j in (0, 2):
        for name in ("preds", "pvalues", "log_s", "alarms"):
            a, b = getattr(rec, name)[:, j], getattr(partial, name)[:, j]
            assert np.array_equal(a, b, equal_nan=name in ("pvalues", "log_s"))


def test_record_csv_round_trip(tmp_path, noisy_stagger_record):
    _, _, rec = noisy_stagger_record
    path = tmp_path / "rec.csv"
    rec.to_csv(path)
    back = RunRecord.from_csv(path, rec.classes)
    for name in ("timestamps", "labels", "ensemble", "preds", "alarms"):
        assert np.array_equal(getattr(rec, name), getattr(back, name))
    assert np.array_equal(rec.confs, back.confs, equal_nan=True)


def test_buffer_clamps_old_anchor(caplog):
    stream = list(generate_stagger(40, ConceptSchedule(("a",), 100), seed=2))
    ens = Ensemble(EnsembleConfig(thetas=(3,), buffer_cap=5), STAGGER_SCHEMA)
    clock = [0]
    # S climbs above r immediately and alarms much later, so d is far back
    ens.pipelines[0].betting = ScriptedBets({4: 11.0, 30: 20.0}, clock)
    with caplog.at_level("WARNING"):
        for z in stream:
            clock[0] = z.timestamp
            ens.step(z)
    assert "clamped" in caplog.text
    t, d, size = ens.pipelines[0].training_windows[1]
    assert (t, size) == (30, 3) and d == 30 - (3 + 5) + 1
