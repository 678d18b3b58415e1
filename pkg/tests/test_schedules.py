import math

import numpy as np
import pytest

from falsevac.schedules import (
    Constant,
    DriveSchedule,
    Linear,
    ModulatedFlip,
    Segment,
    Tabulated,
    false_vacuum_protocol,
    profile_from_dict,
)


def test_linear_profile():
    p = Linear(0.0, 2.0)
    assert p(0.0, 4.0) == 0.0
    assert p(1.0, 4.0) == 0.5
    assert p(9.0, 4.0) == 2.0


def test_tabulated_profile(tmp_path):
    t = Tabulated((0.0, 1.0, 3.0), (0.0, 2.0, 0.0))
    assert t(0.5, 3.0) == pytest.approx(1.0)
    assert t(2.0, 3.0) == pytest.approx(1.0)
    f = tmp_path / "hz.csv"
    f.write_text("# t,hz\n0,1\n1,0\n2,-1\n")
    loaded = Tabulated.load(f)
    assert loaded(1.5, 2.0) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        Tabulated((0.0, 0.0), (1.0, 2.0))


def test_flip_crossing_scales_with_target_squared():
    for target in (-0.5, -1.0, -2.0):
        f = ModulatedFlip(target=target, start=1.0, k=0.3)
        assert f.crossing_time == pytest.approx(0.3 * target**2)
        # linear part passes zero at the crossing time
        assert f(f.crossing_time) == pytest.approx(0.0, abs=1e-12)
        assert f(f.ramp_time) == pytest.approx(target)


def test_flip_modulation_settles():
    f = ModulatedFlip(target=-1.0, amplitude=0.2, frequency=3.0, settling_time=0.75)
    tr = f.ramp_time
    s = np.linspace(0.75, 3.0, 400)
    dev = np.array([abs(f(tr + x) - f.target) for x in s])
    assert dev.max() < 0.01 * f.amplitude
    assert f.continued(0.4)(0.1) == pytest.approx(f(0.5))


def test_schedule_roundtrip_and_locate():
    sched = false_vacuum_protocol(0.05, ModulatedFlip(-2.0, amplitude=0.1), pause=10.0, irt=5.0, mt=2.0)
    assert [s.name for s in sched.segments] == ["irt", "flip", "pt", "mt"]
    assert sched.anchors()["pt"] == 10.0
    assert sched.total_time == pytest.approx(5 + sched.segments[1].duration + 10 + 2)
    back = DriveSchedule.from_dict(sched.to_dict())
    for t in np.linspace(0, sched.total_time, 37):
        assert back.fields(t) == pytest.approx(sched.fields(t))
    k, tau = sched.locate(6.0)
    assert sched.segments[k].name == "flip" and tau == pytest.approx(1.0)


def test_protocol_is_continuous_across_segments():
    sched = false_vacuum_protocol(0.05, ModulatedFlip(-1.0, amplitude=0.2, frequency=2.0), 5.0, irt=3.0, mt=2.0)
    for edge in sched.boundaries()[1:-1]:
        a = sched.fields(edge - 1e-9)
        b = sched.fields(edge + 1e-9)
        assert a == pytest.approx(b, abs=1e-6)
    assert sched.fields(0.0) == (0.0, 1.0)
    assert sched.fields(sched.total_time)[0] == pytest.approx(0.0)


def test_schedule_rejects_unknown_fields():
    with pytest.raises(ValueError):
        DriveSchedule.from_dict({"segments": [], "bogus": 1})
    with pytest.raises(ValueError):
        Segment(-1.0, Constant(0.0), Constant(0.0))
    with pytest.raises(ValueError):
        profile_from_dict({"kind": "cubic"})


def test_min_feature():
    assert math.isinf(DriveSchedule.constant(0.1, -1.0, 5.0).min_feature())
    sched = DriveSchedule((Segment(2.0, Linear(0, 1), Constant(1.0)),))
    assert sched.min_feature() == 2.0
