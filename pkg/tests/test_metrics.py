from lymphodetect.metrics import f1_score, match_detections


def test_exact_matches():
    pred = [(10.0, 10.0), (50.0, 50.0)]
    truth = [(10.0, 10.0), (50.0, 50.0)]
    assert match_detections(pred, truth, 5.0) == (2, 0, 0)


def test_tolerance_boundary():
    assert match_detections([(0.0, 0.0)], [(0.0, 4.0)], 4.0) == (1, 0, 0)
    assert match_detections([(0.0, 0.0)], [(0.0, 4.1)], 4.0) == (0, 1, 1)


def test_one_to_one_assignment():
    # two predictions near one truth: only one may match
    pred = [(10.0, 10.0), (12.0, 10.0)]
    truth = [(11.0, 10.0)]
    tp, fp, fn = match_detections(pred, truth, 5.0)
    assert (tp, fp, fn) == (1, 1, 0)


def test_empty_sides():
    assert match_detections([], [(1.0, 1.0)], 5.0) == (0, 0, 1)
    assert match_detections([(1.0, 1.0)], [], 5.0) == (0, 1, 0)
    assert match_detections([], [], 5.0) == (0, 0, 0)


def test_f1_score():
    assert f1_score(0, 0, 0) == 0.0
    assert f1_score(9, 1, 1) == 0.9
    assert f1_score(5, 0, 0) == 1.0
