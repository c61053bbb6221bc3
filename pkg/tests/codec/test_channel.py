"""Tests for the simulated V2V channel."""

import numpy as np
import pytest

import codec
from errors import BudgetExceededError
from models import ChannelConfig, ChannelName


def test_presets() -> None:
    dsrc = ChannelConfig.preset(ChannelName.DSRC)
    c_v2x = ChannelConfig.preset("C-V2X", loss_probability=0.0)

    assert dsrc.bandwidth_bps == 2_000_000
    assert dsrc.max_package_bytes == 200_000
    assert c_v2x.bandwidth_bps == 7_200_000
    assert c_v2x.max_package_bytes == 720_000
    assert c_v2x.loss_probability == 0.0


def test_latency_is_size_over_bandwidth() -> None:
    channel = ChannelConfig.preset(ChannelName.DSRC, loss_probability=0.0)
    result = codec.transmit(bytes(2500), channel, np.random.default_rng(0))

    assert result.delivered == bytes(2500)
    assert not result.lost
    assert result.latency == pytest.approx(0.01)


def test_budget_exceeded() -> None:
    channel = ChannelConfig(max_package_bytes=100, loss_probability=0.0)
    with pytest.raises(BudgetExceededError, match="exceeds") as excinfo:
        codec.transmit(bytes(101), channel, np.random.default_rng(0))
    assert excinfo.value.size == 101
    assert excinfo.value.budget == 100

    assert not codec.transmit(bytes(100), channel, np.random.default_rng(0)).lost


def test_certain_loss() -> None:
    channel = ChannelConfig(loss_probability=1.0)
    rng = np.random.default_rng(0)
    assert all(codec.transmit(b"x", channel, rng).lost for _ in range(100))


def test_loss_rate_matches_probability() -> None:
    channel = codec.V2VChannel(ChannelConfig(loss_probability=0.05), seed=3)
    for _ in range(10_000):
        channel.send(b"packet", sender=1, receiver=0)

    assert channel.sent == 10_000
    assert 0.04 < channel.lost / channel.sent < 0.06
    assert channel.sizes == [6] * 10_000


class TestV2VChannel:
    def test_same_seed_same_losses(self) -> None:
        config = ChannelConfig(loss_probability=0.5)

        def losses(seed: int) -> list[bool]:
            channel = codec.V2VChannel(config, seed=seed)
            return [channel.send(b"p", 1, 0).lost for _ in range(200)]

        assert losses(11) == losses(11)
        assert losses(11) != losses(12)

    def test_links_are_independent(self) -> None:
        config = ChannelConfig(loss_probability=0.5)
        alone = codec.V2VChannel(config, seed=4)
        first = [alone.send(b"p", 1, 0).lost for _ in range(50)]

        interleaved = codec.V2VChannel(config, seed=4)
        second: list[bool] = []
        for _ in range(50):
            interleaved.send(b"p", 2, 0)
            second.append(interleaved.send(b"p", 1, 0).lost)

        assert first == second

    def test_sequence_draws_do_not_depend_on_history(self) -> None:
        config = ChannelConfig(loss_probability=0.5)
        fresh = codec.V2VChannel(config, seed=9)
        busy = codec.V2VChannel(config, seed=9)
        for step in range(30):
            busy.send(b"p", 1, 0, sequence=step)

        assert [fresh.send(b"p", 1, 0, sequence=s).lost for s in range(40, 60)] == [
            busy.send(b"p", 1, 0, sequence=s).lost for s in range(40, 60)
        ]

    def test_records_sizes_and_latencies(self) -> None:
        channel = codec.V2VChannel(ChannelConfig.preset("DSRC", loss_probability=1.0))
        result = channel.send(bytes(1000), 3, 0)

        assert result.lost
        assert channel.lost == 1
        assert channel.sizes == [1000]
        assert channel.latencies == [pytest.approx(0.004)]


def test_bench_report() -> None:
    report = codec.bench_report([1000, 3000], ChannelConfig.preset(ChannelName.DSRC))

    assert report.packets == 2
    assert report.ps_mean_bytes == 2000
    assert report.ps_max_bytes == 3000
    assert report.latency_ms_mean == pytest.approx(8.0)
    assert report.reduction_vs_compressed == pytest.approx(255.0)
    assert report.fits_dsrc
    assert report.fits_c_v2x


def test_bench_report_over_dsrc_budget() -> None:
    report = codec.bench_report([300_000], ChannelConfig.preset(ChannelName.C_V2X))
    assert not report.fits_dsrc
    assert report.fits_c_v2x


def test_bench_report_empty() -> None:
    report = codec.bench_report([], ChannelConfig())
    assert report.packets == 0
    assert report.reduction_vs_compressed is None
