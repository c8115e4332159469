import json
import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specsr import io, spectral as sp
from specsr.io import ConfigError, FormatError
from specsr.network import HsrnetConfig, init_params
from specsr.spectral import SpectralCube
from specsr.synth import synth_scene


class TestCube:
    def test_round_trip(self, tmp_path, rng):
        cube = SpectralCube(rng.standard_normal((3, 4, 4)), [450.0, 550.0, 650.0])
        path = tmp_path / "a.hsrc"
        io.write_cube(path, cube)
        back = io.read_cube(path)
        assert back.data.tobytes() == cube.data.tobytes()
        np.testing.assert_array_equal(back.wavelengths_nm, cube.wavelengths_nm)
        assert io.encode_cube(back) == path.read_bytes()

    def test_layout(self):
        cube = SpectralCube(np.arange(2 * 1 * 3, dtype=np.float32).reshape(2, 1, 3))
        buf = io.encode_cube(cube)
        assert buf[:4] == b"HSRC"
        assert struct.unpack_from("<IIIIB", buf, 4) == (1, 3, 1, 2, 0)
        np.testing.assert_array_equal(np.frombuffer(buf[21:], "<f4"), np.arange(6))

    @settings(max_examples=30, deadline=None)
    @given(c=st.integers(1, 5), h=st.integers(1, 6), w=st.integers(1, 6), wl=st.booleans(),
           seed=st.integers(0, 1000))
    def test_round_trip_property(self, c, h, w, wl, seed):
        rng = np.random.default_rng(seed)
        cube = SpectralCube(rng.standard_normal((c, h, w)), np.arange(c) * 7.5 + 400 if wl else None)
        buf = io.encode_cube(cube)
        assert len(buf) == 21 + (4 * c if wl else 0) + 4 * c * h * w
        assert io.encode_cube(io.decode_cube(buf)) == buf

    def corrupt(self, buf, field):
        with pytest.raises(FormatError) as info:
            io.decode_cube(buf)
        assert info.value.field == field

    def test_bad_magic(self, rng):
        buf = io.encode_cube(SpectralCube(rng.standard_normal((1, 2, 2))))
        self.corrupt(b"XXXX" + buf[4:], "magic")

    def test_truncated(self, rng):
        buf = io.encode_cube(SpectralCube(rng.standard_normal((2, 2, 2))))
        self.corrupt(buf[:-4], "payload")
        self.corrupt(buf + b"\0", "payload")
        self.corrupt(buf[:10], "header")

    def test_bad_version(self, rng):
        buf = bytearray(io.encode_cube(SpectralCube(rng.standard_normal((1, 2, 2)))))
        buf[4] = 2
        self.corrupt(bytes(buf), "version")

    def test_descending_wavelengths(self):
        buf = bytearray(io.encode_cube(SpectralCube(np.zeros((2, 1, 1)), [400.0, 500.0])))
        buf[21:29] = np.array([500.0, 400.0], "<f4").tobytes()
        self.corrupt(bytes(buf), "wavelengths")


class TestSrf:
    def test_well_formed(self):
        srf = io.parse_srf("wavelength_nm,band_1,band_2\n400,0.1,0\n500,0.5,0.2\n600,0,0.9\n")
        assert srf.responses.shape == (3, 2)
        assert srf.band_names == ["band_1", "band_2"]

    @pytest.mark.parametrize("text,line,field", [
        ("wavelength_nm,b1\n400,0.1\n500,-0.2\n", 3, "response"),
        ("wavelength_nm,b1\n500,0.1\n400,0.2\n", 3, "wavelength_nm"),
        ("wavelength_nm,b1,b2\n400,0.1,0.2\n500,0.2\n", 3, "row"),
        ("wavelength_nm,b1\n400,abc\n", 2, "row"),
    ])
    def test_errors_cite_line(self, text, line, field):
        with pytest.raises(FormatError) as info:
            io.parse_srf(text)
        assert info.value.field == field
        assert f"line {line}" in str(info.value)

    def test_bad_header_and_dead_band(self):
        with pytest.raises(FormatError):
            io.parse_srf("nm,b1\n400,1\n")
        with pytest.raises(FormatError):
            io.parse_srf("wavelength_nm,b1,b2\n400,1,0\n500,1,0\n")

    def test_cave_like_round_trip(self, tmp_path):
        srf = sp.cave_like_srf()
        path = tmp_path / "cave.csv"
        io.write_srf(path, srf)
        back = io.read_srf(path)
        np.testing.assert_array_equal(back.sample_wavelengths_nm, srf.sample_wavelengths_nm)
        np.testing.assert_array_equal(back.responses, srf.responses)
        assert io.encode_srf(back) == path.read_bytes()


class TestCheckpoint:
    def cfg(self, **kw):
        phi = sp.build_phi(sp.cave_like_srf(), np.linspace(400, 700, 8))
        return HsrnetConfig(hs_channels=8, ms_channels=3, grouping=sp.group_bands(phi), stages=2,
                            irn_features=4, ssn_features_wide=4, ssn_features_narrow=3, **kw)

    @pytest.mark.parametrize("kw", [{}, dict(use_cam=False), dict(use_srf_grouping=False)])
    def test_round_trip_bitwise(self, tmp_path, kw):
        cfg = self.cfg(**kw)
        params = init_params(cfg)
        path = tmp_path / "m.hsrk"
        io.write_checkpoint(path, cfg, params)
        cfg2, params2 = io.read_checkpoint(path)
        assert cfg2 == cfg and params2.equal(params)
        assert io.encode_checkpoint(cfg2, params2) == path.read_bytes()

    def test_layout(self):
        cfg = self.cfg()
        buf = io.encode_checkpoint(cfg, init_params(cfg))
        assert buf[:4] == b"HSRK"
        version, n = struct.unpack_from("<II", buf, 4)
        assert version == 1
        assert HsrnetConfig.from_json(json.loads(buf[12:12 + n])) == cfg
        (count,) = struct.unpack_from("<I", buf, 12 + n)
        assert count == len(init_params(cfg))

    def test_corruption(self):
        cfg = self.cfg()
        buf = io.encode_checkpoint(cfg, init_params(cfg))
        for bad in (b"HSRC" + buf[4:], buf[:-3], buf + b"\0", buf[:12] + b"[" + buf[13:]):
            with pytest.raises(FormatError):
                io.decode_checkpoint(bad)

    def test_shape_mismatch_rejected(self):
        cfg = self.cfg()
        other = init_params(self.cfg(use_cam=False))
        with pytest.raises(FormatError):
            io.decode_checkpoint(io.encode_checkpoint(cfg, other))


class TestRunConfig:
    def test_defaults_and_paths(self, tmp_path):
        rc = io.parse_run_config({"data": {"hsi": "a.hsrc"}, "srf": {"path": "s.csv"}}, tmp_path)
        assert rc.hsi_paths == [tmp_path / "a.hsrc"] and rc.srf_path == tmp_path / "s.csv"
        assert rc.cam and rc.srf_grouping and rc.fast_loss and rc.alpha == 1e-4

    def test_ablation_switches(self):
        rc = io.parse_run_config({"data": {"hsi": ["a"]}, "srf": {"path": "s"},
                                  "ablation": {"cam": "off", "srf_grouping": "off", "fast_loss": "on"}})
        assert (rc.cam, rc.srf_grouping, rc.fast_loss) == (False, False, True)
        with pytest.raises(ConfigError):
            io.parse_run_config({"data": {"hsi": "a"}, "srf": {"path": "s"}, "ablation": {"cam": "maybe"}})

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="srf.path"):
            io.parse_run_config({"data": {"hsi": "a"}})

    def test_unknown_keys_warn(self, caplog):
        with caplog.at_level(logging.WARNING):
            io.parse_run_config({"data": {"hsi": "a", "zzz": 1}, "srf": {"path": "s"}, "extra": {}})
        assert "data.zzz" in caplog.text and "extra" in caplog.text

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(FormatError):
            io.read_run_config(p)


def test_synth_properties():
    a, lib, ab = synth_scene(5, 12, 10, 16, 4, return_parts=True)
    b = synth_scene(5, 12, 10, 16, 4)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.shape == (16, 10, 12)
    assert lib.min() >= 0.05 - 1e-12 and lib.max() <= 0.95 + 1e-12
    np.testing.assert_allclose(ab.sum(axis=0), 1.0, atol=1e-9)
    # convex hull: every band lies between the smallest and largest endmember value
    assert np.all(a.data >= lib.min(axis=0)[:, None, None] - 1e-6)
    assert np.all(a.data <= lib.max(axis=0)[:, None, None] + 1e-6)
    phi = sp.build_phi(sp.cave_like_srf(), np.linspace(400, 700, 16))
    y = sp.apply_degradation(phi, a).data
    assert y.min() >= 0 and y.max() <= 1
    with pytest.raises(ValueError):
        synth_scene(0, 4, 4, 4, 1)


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write(tmp_path / "f.bin", b"abc")
    assert [p.name for p in tmp_path.iterdir()] == ["f.bin"]
