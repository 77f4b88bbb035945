import pytest

from aovcache.model import ContentParams, CostModel, SystemParams, zipf_popularity


UNIT = ContentParams(lam=1.0, p=1.0, costs=CostModel(c_a=1.0, c_f=1.0, c_w=0.5))


@pytest.fixture
def unit_content():
    """The worked example: p=beta=lam=c_a=c_f=1, c_w=0.5."""
    return UNIT


def desk_system(N=100, beta=4.0, M=25, c_w=0.01, lam=0.01, c_a=0.1, c_f=1.0,
                alpha=1.0) -> SystemParams:
    """Desk-scale analogue of the experimental setup (Zipf popularity)."""
    pops = zipf_popularity(N, alpha)
    contents = tuple(
        ContentParams(lam=lam, p=float(p), costs=CostModel(c_a, c_f, c_w))
        for p in pops
    )
    return SystemParams(beta=beta, contents=contents, M=M)


def random_content(rng, ratio_lo=0.1, ratio_hi=100.0):
    """One random parameter set with p*beta*c_f/c_w inside [ratio_lo, ratio_hi]."""
    while True:
        p = float(rng.uniform(0.01, 1.0))
        beta = float(rng.uniform(0.5, 50.0))
        lam = float(rng.uniform(0.005, 1.0))
        c_a = float(rng.uniform(0.1, 2.0))
        c_f = float(rng.uniform(0.1, 2.0))
        c_w = float(rng.uniform(0.005, 1.0))
        if ratio_lo <= p * beta * c_f / c_w <= ratio_hi:
            return ContentParams(lam=lam, p=p, costs=CostModel(c_a, c_f, c_w)), beta
