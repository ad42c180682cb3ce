import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from immunekit import RatingProfile, pearson
from immunekit.io import DIVERSITY_CLUSTERS, DIVERSITY_ITEMS, DIVERSITY_USERS, ClusterSpec, synth_ratings
from immunekit.network import (
    ImmuneNetwork,
    NetworkExhausted,
    NetworkParams,
    euler_step,
    run,
)
import oracles

FIVE = {"a": 1, "b": 2, "c": 5, "d": 3, "e": 4}


def _net(idiotypic=False, **kw):
    return ImmuneNetwork(RatingProfile("ag", FIVE), NetworkParams(**kw), idiotypic)


def test_params_validation():
    for bad in (dict(k1=0), dict(k2=-1), dict(k3=0), dict(y=0), dict(capacity=0), dict(dt=0),
                dict(concentration_floor=2.0), dict(initial_concentration=20.0), dict(stabilisation_window=0)):
        with pytest.raises(ValueError):
            NetworkParams(**bad)


def test_pure_decay_follows_closed_form():
    params = dict(dt=0.1, k3=1.0, concentration_floor=0.05, initial_concentration=1.0)
    net = _net(**params)
    net.add_antibody(RatingProfile("z", {"x": 1, "y": 3}))  # no overlap, m = 0
    assert net.affinity["z"] == 0.0
    expected_steps = math.ceil(math.log(0.05 / 1.0) / math.log(1 - 0.1 * 1.0))
    assert expected_steps == 29
    for step in range(1, expected_steps):
        assert net.iterate() == []
        assert abs(net.antibodies[0].concentration - 0.9 ** step) <= 1e-9
    assert net.iterate() == ["z"]
    assert len(net) == 0 and "z" not in net.affinity


def test_growth_saturates_at_cap():
    net = _net(dt=0.1)
    net.add_antibody(RatingProfile("twin", FIVE))
    prev = net.antibodies[0].concentration
    for _ in range(200):
        net.iterate()
        cur = net.antibodies[0].concentration
        assert prev <= cur <= net.params.saturation_cap
        prev = cur
    assert prev == net.params.saturation_cap


def test_three_antibody_step_matches_scalar_oracle():
    x = [1.0, 2.5, 0.7]
    m = [0.8, -0.3, 0.45]
    pair = [[1.0, 0.2, -0.6], [0.2, 1.0, 0.9], [-0.6, 0.9, 1.0]]
    p = NetworkParams(k1=2.0, k2=1.5, k3=0.7, y=1.2, dt=0.1)
    for idiotypic in (False, True):
        got = euler_step(x, m, pair, p, idiotypic)
        want = oracles.euler_step(x, m, pair, 2.0, 1.5, 0.7, 1.2, 0.1, 10.0, idiotypic)
        assert np.max(np.abs(got - want)) <= 1e-9


def test_add_and_cache():
    net = _net(idiotypic=True, capacity=3)
    users = [RatingProfile("u1", {"a": 2, "b": 4, "c": 1}),
             RatingProfile("u2", {"a": 5, "c": 0, "d": 3}),
             RatingProfile("u3", {"b": 1, "c": 3, "e": 5, "a": 0})]
    net.add_antibody(users[0])
    assert len(net) == 1 and len(net.affinity) == 1
    net.add_antibody(users[1]).add_antibody(users[2])
    assert len(net.affinity) == 3 and len(net.pair_affinity) == 3
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        key = frozenset((users[a].user_id, users[b].user_id))
        assert net.pair_affinity[key] == pytest.approx(
            oracles.pearson(dict(users[a].votes), dict(users[b].votes)), abs=1e-12)
    with pytest.raises(ValueError):
        net.add_antibody(RatingProfile("u4", {"a": 1}))


def test_stabilisation_window():
    net = _net(stabilisation_window=10)
    assert not net.is_stabilised()
    net.add_antibody(RatingProfile("twin", FIVE))
    for k in range(1, 11):
        net.iterate()
        assert net.is_stabilised() == (k == 10)


def test_drop_resets_quiet_counter():
    net = _net(dt=0.1)
    net.add_antibody(RatingProfile("twin", FIVE))
    net.add_antibody(RatingProfile("z", {"x": 1}))
    drops = []
    while len(net) == 2:
        drops = net.iterate()
    # the decaying antibody falls out at its 29th step
    assert drops == ["z"] and net.iterations == 29 and net.quiet_iterations == 0
    for _ in range(9):
        net.iterate()
    assert not net.is_stabilised()
    net.iterate()
    assert net.is_stabilised()


def test_identical_pool_saturates():
    pool = [RatingProfile(f"t{k}", FIVE) for k in range(12)]
    net = run(RatingProfile("ag", FIVE), pool)
    assert len(net) == 10 and net.is_stabilised()
    assert all(ab.concentration == 10.0 for ab in net.antibodies)


def test_disjoint_pool_exhausts():
    pool = [RatingProfile(f"z{k}", {"x": k % 5, "y": 2}) for k in range(4)]
    with pytest.raises(NetworkExhausted) as err:
        run(RatingProfile("ag", FIVE), pool)
    assert len(err.value.network) == 0


def test_empty_pool_rejected():
    with pytest.raises(ValueError):
        run(RatingProfile("ag", FIVE), [RatingProfile("ag", FIVE)])


def _fifty_user_pool(seed):
    table, manifest = synth_ratings(51, 20, [ClusterSpec(15, noise=0.4, density=0.6)], seed=seed)
    ids = sorted(table.profiles)
    antigen = table.profiles[manifest["cluster.0"][0]]
    pool = [table.profiles[u] for u in ids if u != antigen.user_id]
    return antigen, pool


@pytest.mark.parametrize("idiotypic", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_run_matches_replay_oracle(idiotypic, seed):
    antigen, pool = _fifty_user_pool(seed)
    p = NetworkParams()
    net = run(antigen, pool, p, idiotypic_enabled=idiotypic)
    want = oracles.network_replay(
        dict(antigen.votes), [(u.user_id, dict(u.votes)) for u in pool],
        p.capacity, p.stabilisation_window, p.concentration_floor, p.initial_concentration,
        p.saturation_cap, p.k1, p.k2, p.k3, p.y, p.dt, p.penalty_cutoff, idiotypic)
    assert net.ids() == list(want)
    np.testing.assert_allclose(net.concentrations(), list(want.values()), atol=1e-9)


def test_run_deterministic_with_shuffle():
    antigen, pool = _fifty_user_pool(4)
    a = run(antigen, pool, idiotypic_enabled=True, shuffle=True, seed=7)
    b = run(antigen, pool, idiotypic_enabled=True, shuffle=True, seed=7)
    assert a.ids() == b.ids() and (a.concentrations() == b.concentrations()).all()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=6), st.data())
def test_euler_step_stays_in_bounds(x, data):
    n = len(x)
    m = data.draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n))
    pair = np.clip(np.array(data.draw(st.lists(st.floats(-1, 1), min_size=n * n, max_size=n * n))).reshape(n, n), -1, 1)
    out = euler_step(x, m, (pair + pair.T) / 2, NetworkParams(), True)
    assert ((out >= 0) & (out <= 10)).all()


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def _manual(antigen_votes, members):
    """Network with fixed concentrations; ``members`` are (id, votes, conc)."""
    net = ImmuneNetwork(RatingProfile("ag", antigen_votes), NetworkParams())
    for uid, votes, conc in members:
        net.add_antibody(RatingProfile(uid, votes))
        net.antibodies[-1].concentration = conc
    return net


def test_predict_simple_cases():
    base = {"a": 1, "b": 2, "c": 5, "d": 3, "e": 4}
    net = _manual(base, [("s", dict(base, q=4), 2.0)])
    assert net.predict("q") == 4
    assert net.predict("missing") is None
    net = _manual(base, [("s", dict(base, q=2), 3.0), ("t", dict(base, q=4), 3.0)])
    assert net.predict("q") == pytest.approx(3.0)


def test_predict_five_voters_matches_oracle():
    rng = np.random.default_rng(12)
    base = {f"i{k}": int(v) for k, v in enumerate(rng.integers(0, 6, 8))}
    members = []
    for k, conc in enumerate([0.4, 1.3, 2.2, 5.0, 9.1]):
        votes = {i: int(np.clip(s + rng.integers(-1, 2), 0, 5)) for i, s in base.items()}
        votes["target"] = int(rng.integers(0, 6))
        members.append((f"v{k}", votes, conc))
    net = _manual(base, members)
    voters = [(c, pearson(RatingProfile(u, v), net.antigen), v) for u, v, c in members]
    assert any(m > 0 for _, m, _ in voters)
    want = oracles.weighted_vote(voters, "target")
    assert net.predict("target") == pytest.approx(want, abs=1e-12)
    contributing = [v["target"] for c, m, v in voters if m > 0]
    assert min(contributing) <= net.predict("target") <= max(contributing)


def test_reflect_negative_uses_mirrored_vote():
    base = {"a": 0, "b": 1, "c": 2, "d": 4, "e": 5}
    mirror = {k: 5 - v for k, v in base.items()}
    net = ImmuneNetwork(RatingProfile("ag", base), NetworkParams(reflect_negative=True))
    net.add_antibody(RatingProfile("anti", dict(mirror, q=1)))
    assert net.affinity["anti"] < 0
    assert net.predict("q") == 4
    plain = _manual(base, [("anti", dict(mirror, q=1), 1.0)])
    assert plain.predict("q") is None


def test_recommend_cases():
    base = {"a": 1, "b": 2, "c": 5, "d": 3, "e": 4}
    assert _manual(base, [("s", dict(base), 1.0)]).recommend(5) == []
    assert _manual(base, [("s", dict(base, q=3), 1.0)]).recommend(5) == [("q", 3.0)]
    with pytest.raises(ValueError):
        _manual(base, []).recommend(0)


def test_recommend_twenty_items_matches_oracle_sort():
    rng = np.random.default_rng(30)
    base = {f"s{k}": int(v) for k, v in enumerate(rng.integers(0, 6, 6))}
    members = []
    for k in range(6):
        votes = {i: int(np.clip(v + rng.integers(-1, 2), 0, 5)) for i, v in base.items()}
        for j in rng.choice(20, size=12, replace=False):
            votes[f"n{j:02d}"] = int(rng.integers(0, 6))
        members.append((f"v{k}", votes, float(rng.uniform(0.5, 8))))
    net = _manual(base, members)
    voters = [(c, pearson(RatingProfile(u, v), net.antigen), v) for u, v, c in members]
    items = {i for _, _, v in voters for i in v} - set(base)
    scored = [(i, oracles.weighted_vote(voters, i)) for i in items]
    scored = sorted([t for t in scored if t[1] is not None], key=lambda t: (-t[1], t[0]))
    got = net.recommend(20)
    assert [i for i, _ in got] == [i for i, _ in scored][:20]
    np.testing.assert_allclose([s for _, s in got], [s for _, s in scored][:20], atol=1e-12)


def test_idiotypic_diversity_single_seed():
    table, manifest = synth_ratings(DIVERSITY_USERS, DIVERSITY_ITEMS, DIVERSITY_CLUSTERS, seed=0)
    antigen = table.profiles[manifest["cluster.0"][0]]
    pool = list(table.profiles.values())
    on = run(antigen, pool, idiotypic_enabled=True)
    off = run(antigen, pool, idiotypic_enabled=False)
    assert on.mean_pair_affinity() < off.mean_pair_affinity()


def test_mean_pair_affinity_needs_two():
    net = _net()
    assert math.isnan(net.mean_pair_affinity())
