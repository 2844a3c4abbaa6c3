"""Unit tests for the virtual-clock carrier."""

import pytest

from splitbox.fabric import CostModel, InProcessFabric, TokenBucketPacer, run_baseline
from splitbox.nfmodel import BitString, Packet
from splitbox.protocol import ProtocolParams, global_setup
from splitbox.randomness import SeededRandom
from splitbox.transport import FaultPlan, LinkSpec, Topology
from splitbox.wire import decode

pytestmark = pytest.mark.unit


def packets(count, value=0x33):
    return [Packet(BitString(value, 8), BitString(k, 32)) for k in range(count)]


class TestCostModel:
    def test_processor_cost(self):
        model = CostModel()
        assert model.processor_cost(2) == 2 * 150 + 2 * (500 + 60) + 3 * 50

    def test_entry_and_client_cost(self):
        model = CostModel()
        assert model.entry_cost(1, 3) == 300 + 60 + 3 * 150
        assert model.client_cost(False) == 150
        assert model.client_cost(True) == 610

    def test_filter_cost(self):
        assert CostModel().filter_cost(4) == 300

    def test_calibrate_positive(self):
        model = CostModel.calibrate(repeats=10)
        assert min(model.entry_ns, model.codec_ns, model.hash_ns,
                   model.lookup_ns) >= 1

    def test_lookups_replace_only_lookup_cost(self, small_bundle):
        model = CostModel(hash_ns=700).with_lookups(small_bundle, repeats=100,
                                                     rounds=1)
        assert model.hash_ns == 700
        assert model.lookup_ns >= 1

    def test_lookup_cost_does_not_grow_with_table_length(self, small_tree):
        costs = []
        for table_length in (16, 4096):
            params = ProtocolParams(n=8, table_length=table_length, t=2, delta_min=0)
            bundle = global_setup(params, small_tree, SeededRandom(1))
            model = CostModel().with_lookups(bundle, repeats=5000, rounds=5)
            costs.append(model.lookup_ns)
        # a scan over the table would be hundreds of times slower at l=4096
        assert costs[1] < 3 * costs[0]


class TestPacer:
    def test_bursts_per_tick(self):
        times = TokenBucketPacer(1_000_000, tick_ns=100_000).release_times(250)
        assert times[0] == 100_000
        assert times[99] == 100_000
        assert times[100] == 200_000
        assert times[-1] == 300_000

    def test_slow_rate_waits_ticks(self):
        times = TokenBucketPacer(1000, tick_ns=100_000).release_times(3)
        assert times == [1_000_000, 2_000_000, 3_000_000]

    def test_long_run_rate(self):
        times = TokenBucketPacer(250_000).release_times(10_000)
        assert times[-1] / 1e9 == pytest.approx(10_000 / 250_000, rel=0.01)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            TokenBucketPacer(0)
        with pytest.raises(ValueError):
            TokenBucketPacer(10, tick_ns=0)


class TestBaseline:
    def test_exit_times(self):
        report = run_baseline([100, 100], [125, 125])
        assert [r.exit_ns for r in report.records] == [2200, 2300]
        assert report.duration_ns == 2300
        assert report.stats["baseline.forwarded"] == 2

    def test_ring_overflow(self):
        pacer = TokenBucketPacer(1e9, tick_ns=1000)
        report = run_baseline([10_000] * 50, [64] * 50, pacer=pacer,
                              queue_capacity=4)
        assert report.stats["fabric.ingress_dropped"] > 0
        assert report.stats["baseline.forwarded"] + report.stats[
            "fabric.ingress_dropped"] == 50


class TestInProcessFabric:
    def test_clean_run(self, small_bundle):
        report = InProcessFabric(Topology.local(2), small_bundle).run(packets(40))
        assert report.delivered == 40
        assert report.stats["client.reconstructed"] == 40
        assert report.lost == 0
        assert all(r.delay_ns > 0 for r in report.records)

    def test_deterministic(self, small_bundle):
        def text():
            fabric = InProcessFabric(Topology.local(2), small_bundle, seed=4,
                                     fault_plan=FaultPlan(loss=0.05, seed=9))
            return fabric.run(packets(60)).to_text()

        assert text() == text()

    def test_loss_is_accounted(self, small_bundle):
        fabric = InProcessFabric(Topology.local(2), small_bundle,
                                 fault_plan=FaultPlan(loss=0.1, seed=1),
                                 client_timeout_ns=50_000)
        report = fabric.run(packets(200))
        assert report.stats["fabric.link_lost"] > 0
        assert report.stats["client.expired"] > 0
        assert report.conservation_ok()

    def test_duplicates_are_ignored(self, small_bundle):
        fabric = InProcessFabric(Topology.local(2), small_bundle,
                                 fault_plan=FaultPlan(duplication=0.2, seed=2))
        report = fabric.run(packets(100))
        assert report.stats["client.reconstructed"] == 100
        assert report.stats["client.duplicates"] == report.stats[
            "fabric.link_duplicated"]

    def test_reorder_keeps_verdicts(self, small_bundle):
        clean = InProcessFabric(Topology.local(2), small_bundle).run(packets(50))
        shuffled = InProcessFabric(
            Topology.local(2), small_bundle,
            fault_plan=FaultPlan(reorder_window_ns=50_000, seed=3),
        ).run(packets(50))
        assert shuffled.verdicts == clean.verdicts

    def test_paced_run(self, small_bundle):
        pacer = TokenBucketPacer(100_000)
        report = InProcessFabric(Topology.local(2), small_bundle,
                                 pacer=pacer).run(packets(100))
        assert report.delivered == 100
        assert report.records[-1].entry_ns >= 990_000

    def test_capture(self, small_bundle):
        report = InProcessFabric(Topology.local(2), small_bundle,
                                 capture=True).run(packets(3))
        assert len(report.captured["processor-1"]) == 3
        assert len(report.captured["client"]) == 9
        assert decode(report.captured["processor-2"][0], 8).processor_id == 2

    def test_measured_timing(self, small_bundle):
        report = InProcessFabric(Topology.local(2), small_bundle,
                                 timing="measured").run(packets(5))
        assert report.delivered == 5

    def test_slow_link_dominates(self, small_bundle):
        fast = InProcessFabric(Topology.local(2), small_bundle).run(packets(20))
        slow_topology = Topology.local(2, bandwidth_bps=1_000_000)
        slow = InProcessFabric(slow_topology, small_bundle).run(packets(20))
        assert slow.duration_ns > fast.duration_ns

    def test_rejects_options(self, small_bundle):
        with pytest.raises(ValueError, match="timing"):
            InProcessFabric(Topology.local(2), small_bundle, timing="wall")
        with pytest.raises(ValueError):
            InProcessFabric(Topology.local(2), small_bundle, processor_workers=0)

    def test_link_spec_is_used(self, small_bundle):
        topology = Topology.local(2, propagation_ns=1_000_000)
        report = InProcessFabric(topology, small_bundle).run(packets(1))
        assert report.records[0].delay_ns >= 2 * LinkSpec(
            propagation_ns=1_000_000).propagation_ns
