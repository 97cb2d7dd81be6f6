import pytest

from cpfield import model as mdl
from cpfield import training as tr

from _helpers import random_queries, tiny_arch


@pytest.fixture(scope="session")
def tiny_model():
    """Small trained-ish ensemble for checker plumbing tests (2 members)."""
    import numpy as np

    from cpfield import mc

    rng = np.random.default_rng(99)
    # brief fit toward a radial field so far states read as low CP
    import math

    q = random_queries(rng, 512)
    labels = 1.0 / (1.0 + np.exp((np.hypot(q[:, 0], q[:, 1]) - 4.0) * 2.0))
    members = []
    for seed in (1, 2):
        member = mdl.init_member(tiny_arch(), seed)
        params = tr._param_list(member.params)
        opt = tr.Adam(params, 3e-3)
        for _ in range(60):
            _, grads = tr.gradients(member, q, labels, gamma=0.01)
            opt.step(params, tr._param_list(grads))
        members.append(member)
    return mdl.EnsembleModel(members=members, mode="mean", arch=tiny_arch())
