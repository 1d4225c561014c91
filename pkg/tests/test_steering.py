"""Steering tests: local encodings, move rewards, and the greedy policy.

The interior-move constant -3/7 is frozen arithmetic: shifting one unit of
supply to an adjacent grid lowers the origin-neighborhood balance scores by 3
in total (7 grids lose the origin unit, 4 see the target unit arrive).
"""

import numpy as np
import pytest

from mealtwin.errors import ContractError
from mealtwin.hexgrid import default_region
from mealtwin.rlcore import steering_qnet
from mealtwin.scenario import Order, ScenarioConfig, make_rng
from mealtwin.simcore import MODE_MYOPIC, REALLOCATING, SimState
from mealtwin.steering import (
    NUM_SLOTS,
    STATE_DIM,
    STAY,
    SteerDdqnPolicy,
    apply_steer_decision,
    encode_from_field,
    encode_steer_state,
    grid_neighborhood,
    is_eligible,
    local_score,
    reward_reallocate,
    score_from_field,
    slot_target,
)


def quiet_config(fleet: int = 3) -> ScenarioConfig:
    region = default_region()
    rates = {g: {19: 0.0, 20: 0.0} for g in region.restaurant_ids}
    return ScenarioConfig(region=region, hourly_rates=rates, od_probs={}, fleet_size=fleet)


def noop(sim, oid, remaining) -> None:
    pass


def make_idle_sim(grids, minutes: int = 6) -> SimState:
    """Couriers parked on the given grids, clock advanced past the idle bar."""
    sim = SimState(quiet_config(len(grids)), mode=MODE_MYOPIC, seed_key=(0,))
    for c, g in zip(sim.couriers, grids):
        c.grid = g
    for _ in range(minutes):
        sim.step(noop)
    return sim


def add_pending(sim: SimState, restaurant: int) -> Order:
    o = Order(
        id=sim.next_order_id,
        placed_at=sim.clock,
        restaurant=restaurant,
        household=0,
        est_prep=5.0,
        actual_prep=5.0,
    )
    sim.orders[o.id] = o
    sim.pending.append(o.id)
    sim.next_order_id += 1
    return o


def test_constants():
    assert STAY == 0
    assert NUM_SLOTS == 7
    assert STATE_DIM == 14


def test_grid_neighborhood_sizes():
    region = default_region()
    inner = grid_neighborhood(region, 12)
    assert inner[0] == 12 and len(inner) == 7 and len(set(inner)) == 7
    assert set(inner[1:]) == {n for n in region.neighbor_ids(12) if n is not None}
    corner = grid_neighborhood(region, 0)
    assert corner[0] == 0 and len(corner) < 7
    # Adjacency is symmetric, so membership must be too.
    for g in range(25):
        for n in grid_neighborhood(region, g)[1:]:
            assert g in grid_neighborhood(region, n)


def test_scores_sum_the_field():
    region = default_region()
    field = np.arange(25, dtype=float)
    for g in (0, 4, 12, 24):
        assert score_from_field(region, field, g) == sum(
            field[n] for n in grid_neighborhood(region, g)
        )
    sim = make_idle_sim([12, 12, 13], minutes=0)
    assert local_score(sim, 12) == 3.0  # all three couriers inside 12's patch


def test_eligibility_threshold_is_strict():
    sim = make_idle_sim([12, 13, 14], minutes=5)
    assert not any(is_eligible(sim, c.id) for c in sim.couriers)
    sim.step(noop)
    assert all(is_eligible(sim, c.id) for c in sim.couriers)
    with pytest.raises(ContractError):
        encode_steer_state(make_idle_sim([12], minutes=0), 0)


def test_encode_layout_interior():
    sim = make_idle_sim([12, 12, 13])
    field = sim.gap_field()
    s, mask = encode_steer_state(sim, 0)
    assert s.shape == (14,) and mask.all()
    assert s[0] == field[12]
    assert s[1] == score_from_field(sim.region, field, 12)
    for slot, nid in enumerate(sim.region.neighbor_ids(12), start=1):
        assert s[2 * slot] == field[nid]
        assert s[2 * slot + 1] == score_from_field(sim.region, field, nid)


def test_encode_masks_missing_neighbors():
    sim = make_idle_sim([0, 12, 12])
    s, mask = encode_steer_state(sim, 0)
    slots = sim.region.neighbor_ids(0)
    assert mask[STAY]
    for slot in range(1, 7):
        assert mask[slot] == (slots[slot - 1] is not None)
        if slots[slot - 1] is None:
            assert s[2 * slot] == 0.0 and s[2 * slot + 1] == 0.0
    assert mask.sum() == 1 + sum(1 for n in slots if n is not None)


def test_slot_target_mapping():
    sim = make_idle_sim([12])
    assert slot_target(sim, 12, STAY) is None
    for slot, nid in enumerate(sim.region.neighbor_ids(12), start=1):
        assert slot_target(sim, 12, slot) == nid
    off = next(
        i + 1 for i, n in enumerate(sim.region.neighbor_ids(0)) if n is None
    )
    with pytest.raises(ContractError):
        slot_target(sim, 0, off)


def test_stay_and_self_moves_are_free():
    sim = make_idle_sim([12, 13, 14])
    assert reward_reallocate(sim, 12, None) == 0.0
    assert reward_reallocate(sim, 12, 12) == 0.0


def test_interior_move_on_flat_field():
    sim = make_idle_sim([24, 24, 24], minutes=0)
    field = sim.gap_field()
    assert field[12] == 0.0 and field[13] == 0.0
    assert reward_reallocate(sim, 12, 13) == pytest.approx(-3.0 / 7.0)


def test_interior_move_hand_case():
    # Two idle couriers at 12, one pending order at 13: gap +2 vs -1.
    # Linear score shift keeps the neighborhood term at -3/7.
    sim = make_idle_sim([12, 12, 20])
    add_pending(sim, 13)
    field = sim.gap_field()
    assert field[12] == 2.0 and field[13] == -1.0
    assert reward_reallocate(sim, 12, 13) == pytest.approx(3.0 - 3.0 / 7.0)


def brute_reward(region, field, origin, target):
    shifted = field.copy()
    shifted[origin] -= 1.0
    shifted[target] += 1.0
    around = [origin] + [n for n in region.neighbor_ids(origin) if n is not None]
    total = 0.0
    for g in around:
        patch = [g] + [n for n in region.neighbor_ids(g) if n is not None]
        total += sum(shifted[p] for p in patch) - sum(field[p] for p in patch)
    return field[origin] - field[target] + total / len(around)


def test_reward_matches_brute_force_everywhere():
    sim = make_idle_sim([3, 7, 21])
    add_pending(sim, 13)
    add_pending(sim, 13)
    add_pending(sim, 19)
    field = sim.gap_field()
    region = sim.region
    checked = 0
    for origin in range(25):
        for nid in region.neighbor_ids(origin):
            if nid is None:
                continue
            expect = brute_reward(region, field.astype(float), origin, nid)
            assert reward_reallocate(sim, origin, nid) == pytest.approx(expect)
            checked += 1
    # 150 slots minus the 38 that fall off the 5x5 boundary.
    assert checked == 112


def test_apply_steer_stay_leaves_courier_alone():
    sim = make_idle_sim([12, 13, 14])
    reward, dest = apply_steer_decision(sim, 0, STAY)
    assert (reward, dest) == (0.0, 12)
    assert sim.couriers[0].status == "idle" and sim.couriers[0].grid == 12


def test_apply_steer_move_starts_reallocation():
    sim = make_idle_sim([12, 13, 14])
    slots = sim.region.neighbor_ids(12)
    action = next(i + 1 for i, n in enumerate(slots) if n == 13)
    expect = reward_reallocate(sim, 12, 13)
    reward, dest = apply_steer_decision(sim, 0, action)
    assert reward == pytest.approx(expect) and dest == 13
    c = sim.couriers[0]
    assert c.status == REALLOCATING and c.done_time == sim.clock + 3.0


def test_sequential_moves_see_updated_field():
    sim = make_idle_sim([12, 12, 24])
    slots = sim.region.neighbor_ids(12)
    action = next(i + 1 for i, n in enumerate(slots) if n == 13)
    first, _ = apply_steer_decision(sim, 0, action)
    second, _ = apply_steer_decision(sim, 1, action)
    # Courier 0 is mid-move: no longer supply at 12, not yet at 13.
    assert first == pytest.approx(2.0 - 3.0 / 7.0)
    assert second == pytest.approx(1.0 - 3.0 / 7.0)


def test_policy_greedy_and_trace():
    sim = make_idle_sim([12, 13, 24])
    net = steering_qnet(rng=make_rng(7))
    s, mask = encode_steer_state(sim, 0)
    q = net.forward(s)
    expect = int(np.where(mask, q, -np.inf).argmax())
    trace = []
    SteerDdqnPolicy(net, trace=trace)(sim, 0)
    row = trace[0]
    assert row["minute"] == sim.clock and row["courier"] == 0
    assert row["from"] == 12
    if expect == STAY:
        assert row["to"] == 12 and row["reward"] == 0.0
    else:
        assert row["to"] == sim.region.neighbor_ids(12)[expect - 1]
        assert sim.couriers[0].status == REALLOCATING
