"""The five effects, chain sampling, composition, and the JSON wire format."""

import json
import math

import numpy as np
import pytest

from cpclab import (
    AddNoiseSpec,
    AudioBuffer,
    BandRejectSpec,
    EffectChainSpec,
    NoiseBank,
    PitchSpec,
    ReverbSpec,
    RngStream,
    TimeDropSpec,
    add_noise,
    apply_chain,
    band_pass,
    band_reject,
    chain_spec_from_json,
    chain_spec_to_json,
    pitch_shift,
    reverb,
    rms_db,
    sample_chain,
    time_drop,
)
from cpclab.effects import TimeDropParams, preset_chain_doc
from cpclab.errors import ChainError

from conftest import sine
from oracles import fft_peak_hz

RATE = 16000


def steady_rms_db(buf, skip_seconds=0.25):
    """RMS after the filter transient has decayed."""
    tail = buf.samples[int(skip_seconds * buf.sample_rate) :]
    return rms_db(AudioBuffer(tail, buf.sample_rate))


def simple_bank(rng_seed=0, seconds=2.0, rate=RATE):
    rng = np.random.default_rng(rng_seed)
    noise = AudioBuffer(0.1 * rng.standard_normal(int(seconds * rate)), rate)
    return NoiseBank((("noise.wav", noise),), rate, None)


class TestSampleChain:
    def test_pitch_draw_statistics(self):
        spec = EffectChainSpec((PitchSpec(-300, 300),))
        rng = RngStream(123)
        draws = [
            sample_chain(spec, RATE, RATE, rng.child(i)).params[0].cents
            for i in range(10_000)
        ]
        assert min(draws) == -300
        assert max(draws) == 300
        assert abs(np.mean(draws)) < 10.0

    def test_degenerate_interval(self):
        spec = EffectChainSpec((ReverbSpec(42.0, 42.0),))
        chain = sample_chain(spec, RATE, RATE, RngStream(0))
        assert chain.params[0].room_scale == 42.0

    def test_determinism(self):
        spec = EffectChainSpec(
            (PitchSpec(), ReverbSpec(), BandRejectSpec(), TimeDropSpec())
        )
        first = sample_chain(spec, RATE, RATE, RngStream(9, (4,)))
        second = sample_chain(spec, RATE, RATE, RngStream(9, (4,)))
        assert first == second

    def test_drop_window_must_fit(self):
        spec = EffectChainSpec((TimeDropSpec(50.0),))
        with pytest.raises(ChainError):
            sample_chain(spec, 100, RATE, RngStream(0))

    def test_bandrej_width_within_nyquist(self):
        spec = EffectChainSpec((BandRejectSpec(20_000.0),))
        with pytest.raises(ChainError):
            sample_chain(spec, RATE, RATE, RngStream(0))

    def test_canonical_order_enforced(self):
        spec = EffectChainSpec((TimeDropSpec(), PitchSpec(), ReverbSpec()))
        names = [type(e).__name__ for e in spec.effects]
        assert names == ["PitchSpec", "ReverbSpec", "TimeDropSpec"]
        with pytest.raises(ChainError):
            EffectChainSpec((PitchSpec(), PitchSpec()))


class TestPitchShift:
    def test_zero_cents_is_identity(self, sine440):
        out = pitch_shift(sine440, 0)
        assert np.array_equal(out.samples, sine440.samples)

    def test_octave_up(self, sine440):
        out = pitch_shift(sine440, 1200)
        assert len(out) == len(sine440)
        peak = fft_peak_hz(out.samples, RATE)
        assert abs(peak - 880.0) / 880.0 < 0.02

    def test_octave_down(self, sine440):
        out = pitch_shift(sine440, -1200)
        peak = fft_peak_hz(out.samples, RATE)
        assert abs(peak - 220.0) / 220.0 < 0.02

    def test_duration_preserved_across_cents(self, sine440):
        for cents in (-700, -137, 59, 300, 883):
            assert len(pitch_shift(sine440, cents)) == len(sine440)

    def test_range_precondition(self, sine440):
        with pytest.raises(ValueError):
            pitch_shift(sine440, 1300)


class TestReverb:
    def test_silence_in_silence_out(self):
        buf = AudioBuffer(np.zeros(RATE), RATE)
        assert np.array_equal(reverb(buf, 80.0).samples, np.zeros(RATE))

    def test_larger_room_decays_longer(self):
        impulse = np.zeros(RATE)
        impulse[0] = 1.0
        buf = AudioBuffer(impulse, RATE)

        def decay_time(room):
            wet = reverb(buf, room).samples.copy()
            wet[0] = 0.0  # remove the dry spike
            env = np.abs(wet)
            above = np.nonzero(env > env.max() * 1e-3)[0]  # -60 dB from peak
            return above[-1] if len(above) else 0

        assert decay_time(100.0) > decay_time(20.0)

    def test_bounded_output_for_unit_noise(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            buf = AudioBuffer(rng.uniform(-1, 1, RATE), RATE)
            out = reverb(buf, 100.0)
            assert np.max(np.abs(out.samples)) < 4.0

    def test_length_preserved(self, sine440):
        assert len(reverb(sine440, 37.5)) == len(sine440)

    def test_room_scale_range(self, sine440):
        with pytest.raises(ValueError):
            reverb(sine440, 101.0)


class TestBandReject:
    def test_zero_width_is_identity(self, sine440):
        assert band_reject(sine440, 1000.0, 0.0) is sine440

    def test_notch_at_center(self):
        probe = sine(1000.0, seconds=2.0)
        out = band_reject(probe, 1000.0, 150.0)
        assert steady_rms_db(out) - steady_rms_db(probe) <= -20.0

    def test_off_center_untouched(self):
        probe = sine(1000.0, seconds=2.0)
        out = band_reject(probe, 3000.0, 150.0)
        assert abs(steady_rms_db(out) - steady_rms_db(probe)) < 1.0

    def test_band_outside_nyquist(self, sine440):
        with pytest.raises(ValueError):
            band_reject(sine440, 7990.0, 100.0)

    def test_spectral_contract_random_bands(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            width = float(rng.uniform(40.0, 150.0))
            center = float(rng.uniform(300.0, 6000.0))
            probe = sine(center, seconds=2.0)
            notched = band_reject(probe, center, width)
            assert steady_rms_db(notched) - steady_rms_db(probe) <= -20.0
            probe_far = sine(center + 1.5 * width, seconds=2.0)
            passed = band_reject(probe_far, center, width)
            assert abs(steady_rms_db(passed) - steady_rms_db(probe_far)) <= 1.0


class TestBandPass:
    def test_passes_inside(self):
        probe = sine(150.0, seconds=2.0)
        out = band_pass(probe, 80.0, 240.0)
        assert steady_rms_db(out) - steady_rms_db(probe) > -3.0

    def test_rejects_outside(self):
        probe = sine(1000.0, seconds=2.0)
        out = band_pass(probe, 80.0, 240.0)
        assert steady_rms_db(out) - steady_rms_db(probe) <= -20.0

    def test_full_band_is_identity(self):
        for freq in (100.0, 1000.0, 6000.0):
            probe = sine(freq, seconds=0.5)
            out = band_pass(probe, 0.0, RATE / 2)
            assert abs(steady_rms_db(out, 0.1) - steady_rms_db(probe, 0.1)) < 1.0

    def test_lowpass_degenerate(self):
        low = sine(100.0, seconds=2.0)
        high = sine(3000.0, seconds=2.0)
        assert abs(steady_rms_db(band_pass(low, 0.0, 500.0)) - steady_rms_db(low)) < 1.0
        assert steady_rms_db(band_pass(high, 0.0, 500.0)) - steady_rms_db(high) <= -20.0

    def test_octave_attenuation_random_bands(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            low = float(rng.uniform(100.0, 400.0))
            high = float(rng.uniform(2.5, 4.0)) * low
            center = math.sqrt(low * high)
            inside = sine(center, seconds=2.0)
            below = sine(low / 2.0, seconds=2.0)
            above = sine(high * 2.0, seconds=2.0)
            assert abs(steady_rms_db(band_pass(inside, low, high)) - steady_rms_db(inside)) <= 1.0
            assert steady_rms_db(band_pass(below, low, high)) - steady_rms_db(below) <= -20.0
            assert steady_rms_db(band_pass(above, low, high)) - steady_rms_db(above) <= -20.0

    def test_inverted_band(self, sine440):
        with pytest.raises(ValueError):
            band_pass(sine440, 500.0, 100.0)


class TestTimeDrop:
    def test_definitional_window(self):
        buf = AudioBuffer(np.ones(RATE), RATE)
        out = time_drop(buf, 1600, 50.0)
        assert np.array_equal(out.samples[1600:2400], np.zeros(800))
        assert np.array_equal(out.samples[:1600], np.ones(1600))
        assert np.array_equal(out.samples[2400:], np.ones(RATE - 2400))

    def test_zero_duration_identity(self, sine440):
        assert time_drop(sine440, 100, 0.0) is sine440

    def test_overrun_rejected(self, sine440):
        with pytest.raises(ValueError):
            time_drop(sine440, len(sine440) - 1, 50.0)


class TestAddNoise:
    def test_infinite_snr_identity(self, sine440):
        noise = sine(100.0)
        assert add_noise(sine440, noise, math.inf) is sine440

    def test_target_snr_met(self, sine440):
        rng = np.random.default_rng(5)
        noise = AudioBuffer(0.5 * rng.standard_normal(RATE), RATE)
        mixed = add_noise(sine440, noise, 0.0)
        noise_part = mixed.samples - sine440.samples
        measured = rms_db(sine440) - rms_db(AudioBuffer(noise_part, RATE))
        assert abs(measured - 0.0) < 0.1

    def test_short_noise_is_tiled(self, sine440):
        third = RATE // 4
        rng = np.random.default_rng(6)
        noise = AudioBuffer(0.3 * rng.standard_normal(third), RATE)
        mixed = add_noise(sine440, noise, 10.0)
        addend = mixed.samples - sine440.samples
        assert np.allclose(addend[:third], addend[third : 2 * third])

    def test_rate_mismatch(self, sine440):
        noise = AudioBuffer(np.ones(100), 8000)
        with pytest.raises(ChainError):
            add_noise(sine440, noise, 10.0)

    def test_silent_noise_rejected(self, sine440):
        noise = AudioBuffer(np.zeros(100), RATE)
        with pytest.raises(ChainError):
            add_noise(sine440, noise, 10.0)


class TestApplyChain:
    def test_empty_chain_identity(self, sine440):
        from cpclab import ConcreteChain

        assert apply_chain(sine440, ConcreteChain(())) is sine440

    def test_singleton_matches_direct_call(self, sine440):
        from cpclab import ConcreteChain

        chain = ConcreteChain((TimeDropParams(4000, 50.0),))
        assert np.array_equal(
            apply_chain(sine440, chain).samples, time_drop(sine440, 4000, 50.0).samples
        )

    def test_composition_matches_sequential(self, sine440):
        from cpclab import ConcreteChain
        from cpclab.effects import PitchParams

        chain = ConcreteChain((PitchParams(100), TimeDropParams(2000, 50.0)))
        composed = apply_chain(sine440, chain)
        manual = time_drop(pitch_shift(sine440, 100), 2000, 50.0)
        assert np.array_equal(composed.samples, manual.samples)

    def test_full_chain_deterministic_and_length_preserving(self, sine440):
        bank = simple_bank()
        spec = EffectChainSpec(
            (
                PitchSpec(),
                AddNoiseSpec(bank=bank),
                ReverbSpec(),
                BandRejectSpec(),
                TimeDropSpec(),
            )
        )
        for seed in range(5):
            rng_a = RngStream(seed, (0,))
            rng_b = RngStream(seed, (0,))
            out_a = apply_chain(sine440, sample_chain(spec, len(sine440), RATE, rng_a))
            out_b = apply_chain(sine440, sample_chain(spec, len(sine440), RATE, rng_b))
            assert np.array_equal(out_a.samples, out_b.samples)
            assert len(out_a) == len(sine440)
            assert np.isfinite(out_a.samples).all()

    def test_random_buffers_stay_finite(self):
        bank = simple_bank(1)
        spec = EffectChainSpec(
            (PitchSpec(), AddNoiseSpec(bank=bank), ReverbSpec(), BandRejectSpec(), TimeDropSpec())
        )
        meta = np.random.default_rng(8)
        for seed in range(5):
            n = int(meta.integers(RATE // 2, RATE))
            buf = AudioBuffer(meta.uniform(-1, 1, n), RATE)
            chain = sample_chain(spec, n, RATE, RngStream(seed))
            out = apply_chain(buf, chain)
            assert len(out) == n
            assert np.isfinite(out.samples).all()


class TestChainJson:
    def test_round_trip(self):
        doc = {
            "chain": [
                {"effect": "pitch", "range": [-300, 300]},
                {"effect": "add", "bank": "noise/", "band": [80, 240], "snr": [5, 15]},
                {"effect": "reverb", "range": [0, 100]},
                {"effect": "bandrej", "max_width": 150},
                {"effect": "tdrop", "duration_ms": 50},
            ]
        }
        spec = chain_spec_from_json(doc)
        assert len(spec.effects) == 5
        assert chain_spec_from_json(chain_spec_to_json(spec)) == spec

    def test_defaults_applied(self):
        spec = chain_spec_from_json({"chain": [{"effect": "pitch"}]})
        pitch = spec.effects[0]
        assert (pitch.low_cents, pitch.high_cents) == (-300, 300)

    def test_unknown_effect(self):
        with pytest.raises(ChainError):
            chain_spec_from_json({"chain": [{"effect": "flanger"}]})

    def test_malformed_document(self):
        with pytest.raises(ChainError):
            chain_spec_from_json({"effects": []})
        with pytest.raises(ChainError):
            chain_spec_from_json({"chain": [{"effect": "pitch", "range": [1]}]})

    def test_preset_doc(self):
        doc = preset_chain_doc("pitch+add+reverb", bank_path="bank/")
        names = [e["effect"] for e in doc["chain"]]
        assert names == ["pitch", "add", "reverb"]
        assert doc["chain"][1]["bank"] == "bank/"
        with pytest.raises(ChainError):
            preset_chain_doc("pitch+chorus")

    def test_json_serializable(self):
        spec = chain_spec_from_json(preset_chain_doc("pitch+reverb+tdrop"))
        json.dumps(chain_spec_to_json(spec))
