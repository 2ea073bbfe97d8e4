import numpy as np
import pytest

from rpldet.boxes import BBox, ClassDistribution, ScoredBox


def make_dist(probs, objectness=0.9):
    return ClassDistribution(probs=np.asarray(probs, dtype=np.float64), objectness=objectness)


def make_box(coords, probs, class_id=None, objectness=0.9, proposal_index=-1):
    """ScoredBox from raw coords and a probability vector."""
    dist = make_dist(probs, objectness)
    cid = int(np.argmax(probs)) if class_id is None else class_id
    return ScoredBox(box=BBox(*coords), class_id=cid, score=float(dist.probs[cid]),
                     dist=dist, proposal_index=proposal_index)


def score_vector(score, class_id, class_count):
    """A probability vector whose argmax is class_id with value score."""
    if class_count == 1:
        assert abs(score - 1.0) < 1e-12
        return [1.0]
    rest = (1.0 - score) / (class_count - 1)
    assert rest <= score, "score too small to be the argmax"
    probs = [rest] * class_count
    probs[class_id] = score
    return probs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_boxes(rng, n, class_count=3, extent=20.0, max_size=8.0):
    """n random valid ScoredBoxes with random distributions."""
    out = []
    for i in range(n):
        x1 = rng.uniform(0, extent)
        y1 = rng.uniform(0, extent)
        w = rng.uniform(0.5, max_size)
        h = rng.uniform(0.5, max_size)
        raw = rng.uniform(0.05, 1.0, size=class_count)
        probs = raw / raw.sum()
        out.append(make_box((x1, y1, x1 + w, y1 + h), probs,
                            objectness=float(rng.uniform(0, 1)), proposal_index=i))
    return out
