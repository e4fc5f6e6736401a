import math

import numpy as np
import pytest

from heraldsim.errors import ConfigurationError, DomainError
from heraldsim.events import Arm, ArrivalStream, PairEvents
from heraldsim.source import ArrivalMerger, apply_channel, generate_pair_stream, route_arrivals


def _pairs(pair_times, signal_offsets, idler_offsets) -> PairEvents:
    n = len(pair_times)
    return PairEvents(
        mode_index=np.zeros(n, dtype=np.int64),
        pair_time_ps=np.asarray(pair_times, dtype=np.int64),
        signal_offset_ps=np.asarray(signal_offsets, dtype=np.int64),
        idler_offset_ps=np.asarray(idler_offsets, dtype=np.int64),
        pair_id=np.arange(n, dtype=np.int64),
    )


def test_full_and_zero_transmission():
    pairs = _pairs([100, 200, 300], [-10, -20, -30], [-5, -5, -5])

    full = apply_channel(pairs, Arm.SIGNAL, 1.0, seed=1)
    np.testing.assert_array_equal(full.time_ps, [90, 180, 270])
    np.testing.assert_array_equal(full.pair_id, [0, 1, 2])
    assert full.arm == Arm.SIGNAL

    assert len(apply_channel(pairs, Arm.IDLER, 0.0, seed=1)) == 0


def test_emissions_before_start_are_dropped():
    pairs = _pairs([10, 500], [-20, -20], [-5, -5])
    signal = apply_channel(pairs, Arm.SIGNAL, 1.0, seed=1)
    np.testing.assert_array_equal(signal.time_ps, [480])
    np.testing.assert_array_equal(signal.pair_id, [1])


def test_transmission_must_be_a_probability():
    pairs = _pairs([100], [0], [0])
    with pytest.raises(DomainError):
        apply_channel(pairs, Arm.SIGNAL, 1.5, seed=1)


def test_thinning_fraction(narrowband_source):
    pairs = generate_pair_stream(narrowband_source, 0.5, seed=4)
    survivors = apply_channel(pairs, Arm.IDLER, 0.3, seed=9)

    n = len(pairs)
    assert abs(len(survivors) - 0.3 * n) < 5 * math.sqrt(n * 0.3 * 0.7)
    assert survivors.sorted


def test_routing_partitions_the_stream(make_arrivals):
    arrivals = make_arrivals(np.arange(0, 100_000, 7))
    outputs = route_arrivals(arrivals, [0.5, 0.5], seed=3)

    assert sum(len(o) for o in outputs) == len(arrivals)
    assert not np.intersect1d(outputs[0].pair_id, outputs[1].pair_id).size
    assert abs(len(outputs[0]) - len(arrivals) / 2) < 5 * math.sqrt(len(arrivals) / 4)
    assert all(o.sorted for o in outputs)


def test_single_output_routing_is_identity(make_arrivals):
    arrivals = make_arrivals([1, 2, 3])
    assert route_arrivals(arrivals, [1.0], seed=1)[0] is arrivals


@pytest.mark.parametrize("ratios", [[0.5, 0.6], [], [1.2, -0.2]])
def test_invalid_split_ratios(make_arrivals, ratios):
    with pytest.raises(ConfigurationError):
        route_arrivals(make_arrivals([1, 2, 3]), ratios, seed=1)


def test_merger_releases_sorted_prefixes():
    merger = ArrivalMerger(Arm.SIGNAL)

    first = merger.push(ArrivalStream.from_arrays([100, 900, 1500], [0, 1, 2], Arm.SIGNAL), release_before_ps=1000)
    np.testing.assert_array_equal(first.time_ps, [100, 900])
    assert merger.pending == 1

    # A later chunk can still hold arrivals older than the carried one
    second = merger.push(ArrivalStream.from_arrays([1200, 2500], [3, 4], Arm.SIGNAL), release_before_ps=2000)
    np.testing.assert_array_equal(second.time_ps, [1200, 1500])
    np.testing.assert_array_equal(second.pair_id, [3, 2])

    rest = merger.flush()
    np.testing.assert_array_equal(rest.time_ps, [2500])
    assert merger.pending == 0
