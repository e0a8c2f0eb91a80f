"""Modulator, channel and dataset synthesis checks."""

import math

import numpy as np
import pytest

from alwnn import signals
from alwnn.signals import (ChannelSpec, PROFILES, SCHEME_NAMES, apply_channel,
                           clean_window, frame_rng, modulate, resolve_scheme,
                           rrc_taps, synth_dataset, synth_frame)


class TestConstellations:
    @pytest.mark.parametrize("name", [s.name for s in signals.SCHEMES if s.points is not None])
    def test_mean_power_is_one(self, name):
        pts = resolve_scheme(name).points
        assert abs(np.mean(np.abs(pts) ** 2) - 1.0) < 1e-9

    def test_bpsk_antipodal_mapping(self):
        pts = resolve_scheme("BPSK").points
        assert np.array_equal(pts, [-1.0 + 0j, 1.0 + 0j])

    def test_qpsk_zero_bits_first_quadrant(self):
        pts = resolve_scheme("QPSK").points
        assert pts[0] == pytest.approx((1 + 1j) / np.sqrt(2))

    def test_scheme_ids_stable(self):
        assert SCHEME_NAMES == ("OOK", "4ASK", "BPSK", "QPSK", "8PSK", "16QAM",
                                "64QAM", "CPFSK", "GFSK", "AM-DSB", "FM")
        assert resolve_scheme(5).name == "16QAM"

    def test_unknown_scheme_raises(self):
        with pytest.raises(ValueError):
            resolve_scheme("OFDM")
        with pytest.raises(ValueError):
            resolve_scheme(11)

    def test_distinct_points(self):
        for sch in signals.SCHEMES:
            if sch.points is not None:
                assert len(np.unique(sch.points)) == len(sch.points)


class TestModulate:
    @pytest.mark.parametrize("name", SCHEME_NAMES)
    def test_length_and_unit_power(self, name):
        x = modulate(name, 48, 8, seed=3)
        assert len(x) == 48 * 8
        assert abs(np.mean(np.abs(x) ** 2) - 1.0) < 1e-9

    def test_sps_floor(self):
        with pytest.raises(ValueError):
            modulate("BPSK", 8, samples_per_symbol=1)

    @pytest.mark.parametrize("name", ["CPFSK", "GFSK", "FM"])
    def test_angle_modulations_constant_modulus(self, name):
        x = modulate(name, 64, 8, seed=5)
        assert np.max(np.abs(np.abs(x) - 1.0)) < 1e-9

    def test_rrc_symmetric_unit_energy(self):
        taps = rrc_taps()
        assert len(taps) == 8 * 8 + 1
        assert np.allclose(taps, taps[::-1])
        assert abs(np.sum(taps ** 2) - 1.0) < 1e-12

    def test_deterministic_per_seed(self):
        a = modulate("16QAM", 32, 8, seed=9)
        b = modulate("16QAM", 32, 8, seed=9)
        c = modulate("16QAM", 32, 8, seed=10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_bpsk_matched_filter_recovers_bits(self):
        # sign of the RC-filtered output at symbol instants is the modulator oracle
        x, idx = modulate("BPSK", 64, 8, seed=11, return_symbols=True)
        taps = rrc_taps()
        mf = np.convolve(x, taps)
        # modulate absorbed one group delay; the matched filter adds another
        centre = np.real(mf[len(taps) // 2 + np.arange(64) * 8])
        sent = 2.0 * idx - 1.0
        span = 8
        assert np.array_equal(np.sign(centre[span:-span]), sent[span:-span])


class TestChannel:
    def test_phase_pi_flips_sign(self):
        x = modulate("QPSK", 32, 8, seed=1)
        y = apply_channel(x, ChannelSpec(snr_db=math.inf, phase=np.pi))
        assert np.allclose(y, -x)

    def test_cfo_rotates_per_sample(self):
        x = np.ones(8, dtype=np.complex128)
        y = apply_channel(x, ChannelSpec(snr_db=math.inf, cfo=0.05))
        assert np.allclose(y, np.exp(2j * np.pi * 0.05 * np.arange(8)))

    def test_zero_db_noise_power(self):
        # Monte-Carlo: at 0 dB the injected noise has unit mean power
        x = np.zeros(1024, dtype=np.complex128)
        powers = [np.mean(np.abs(apply_channel(x, ChannelSpec(0.0, seed=s))) ** 2)
                  for s in range(50)]
        assert abs(np.mean(powers) - 1.0) < 0.02

    def test_multipath_echo(self):
        x = np.zeros(8, dtype=np.complex128)
        x[0] = 1.0
        y = apply_channel(x, ChannelSpec(math.inf, multipath=(2, 0.5 + 0j)))
        expect = np.zeros(8, dtype=np.complex128)
        expect[0], expect[2] = 1.0, 0.5
        assert np.allclose(y, expect)

    def test_snr_bounds_enforced(self):
        x = np.ones(4, dtype=np.complex128)
        with pytest.raises(ValueError):
            apply_channel(x, ChannelSpec(snr_db=31))
        with pytest.raises(ValueError):
            apply_channel(x, ChannelSpec(snr_db=0, cfo=0.2))

    def test_measured_snr_tracks_request(self):
        # empirical SNR within +/-0.5 dB of request, 100 frames of length 1024
        for snr in (0, 10):
            errs = []
            for s in range(100):
                rng = frame_rng(77, s)
                x = clean_window("QPSK", 1024, rng=rng)
                clean = apply_channel(x, ChannelSpec(math.inf, cfo=0.003, phase=0.4))
                noisy = apply_channel(x, ChannelSpec(snr, cfo=0.003, phase=0.4), rng=rng)
                p_noise = np.mean(np.abs(noisy - clean) ** 2)
                errs.append(10 * np.log10(1.0 / p_noise))
            assert abs(np.mean(errs) - snr) < 0.5


class TestFrames:
    @pytest.mark.parametrize("name", SCHEME_NAMES)
    def test_clean_window_unit_power(self, name):
        w = clean_window(name, 128, rng=frame_rng(2, 4))
        assert len(w) == 128
        assert abs(np.mean(np.abs(w) ** 2) - 1.0) < 1e-6

    def test_synth_frame_fields(self):
        fr = synth_frame("8PSK", 6, 128, PROFILES["standard"], seed=5, index=17)
        assert fr.scheme_id == 4
        assert fr.snr_db == 6
        assert fr.i.dtype == np.float32 and fr.q.dtype == np.float32
        assert len(fr.i) == len(fr.q) == 128
        assert np.all(np.isfinite(fr.i)) and np.all(np.isfinite(fr.q))

    def test_frame_streams_independent(self):
        a = synth_frame("QPSK", 10, 128, PROFILES["clean"], seed=5, index=0)
        b = synth_frame("QPSK", 10, 128, PROFILES["clean"], seed=5, index=1)
        assert not np.array_equal(a.i, b.i)


class TestSynthDataset:
    def test_grid_counts_and_balance(self):
        ds = synth_dataset(["BPSK", "QPSK"], [0, 10, 18], 4, 128, seed=1)
        assert len(ds) == 2 * 3 * 4
        assert np.bincount(ds.labels()).tolist() == [12, 12]
        for snr in (0, 10, 18):
            for sid in (2, 3):
                assert np.sum((ds.scheme_ids == sid) & (ds.snrs == snr)) == 4

    def test_same_seed_bit_identical(self):
        a = synth_dataset(["OOK", "FM"], [6], 5, 128, seed=42)
        b = synth_dataset(["OOK", "FM"], [6], 5, 128, seed=42)
        assert np.array_equal(a.iq, b.iq)
        assert np.array_equal(a.scheme_ids, b.scheme_ids)

    def test_thread_pool_matches_sequential(self):
        seq = synth_dataset(["BPSK", "GFSK"], [0, 12], 6, 128, seed=7, workers=0)
        par = synth_dataset(["BPSK", "GFSK"], [0, 12], 6, 128, seed=7, workers=4)
        assert np.array_equal(seq.iq, par.iq)
        assert np.array_equal(seq.snrs, par.snrs)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            synth_dataset(["BPSK"], [0], 0, 128)
        with pytest.raises(ValueError):
            synth_dataset([], [0], 1, 128)

    def test_meta_contents(self):
        ds = synth_dataset(["AM-DSB"], [-20, 18], 2, 128, seed=3)
        assert ds.meta["schemes"] == ["AM-DSB"]
        assert ds.meta["snr_grid"] == [-20, 18]
        assert ds.meta["length"] == 128
        assert ds.meta["frames_per_cell"] == 2
        assert ds.meta["seed"] == 3
