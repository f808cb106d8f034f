import struct

import numpy as np
import pytest

from npnslab.checkpoint import (
    HEADER,
    ROLE_RHO,
    CheckpointError,
    atomic_write,
    csv_text,
    decode_field,
    decode_state,
    encode_field,
    encode_state,
    load_field,
    save_field,
    sha256_file,
)
from npnslab.initial import random_state
from npnslab.spectral import Grid, to_spectral


class TestFieldRecords:
    def test_header_layout(self, grid16):
        buf = encode_field(np.zeros(grid16.spectral_shape, dtype=complex), 16, mean_free=True, role=ROLE_RHO)
        magic, version, n, flags = struct.unpack_from("<4sIII", buf)
        assert (magic, version, n) == (b"NPNS", 1, 16)
        assert flags == 1 | (ROLE_RHO << 8)
        assert len(buf) == HEADER.size + 8 * 16 * 16

    def test_wavevector_order_is_fft_shifted(self, grid16):
        x, y = grid16.coordinates
        f = to_spectral(grid16, np.cos(x))
        full = np.frombuffer(encode_field(f.coeffs, 16), dtype="<c8", offset=HEADER.size).reshape(16, 16)
        # index 8 is k = 0 after the shift; k1 = +1 sits at 9
        assert full[9, 8] == pytest.approx(0.5)
        assert full[7, 8] == pytest.approx(0.5)

    def test_round_trip_single_precision(self, tmp_path, grid16, rng):
        f = to_spectral(grid16, rng.standard_normal((16, 16)))
        save_field(tmp_path / "f.npns", f)
        g = load_field(tmp_path / "f.npns")
        np.testing.assert_allclose(g.coeffs, f.coeffs, rtol=0, atol=1e-7)

    @pytest.mark.parametrize(
        "mutate, message",
        [
            (lambda b: b"XXXX" + b[4:], "bad magic"),
            (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "unsupported version"),
            (lambda b: b[:10], "truncated header"),
            (lambda b: b[:100], "truncated coefficient"),
        ],
    )
    def test_corrupt_records_rejected(self, grid16, mutate, message):
        buf = encode_field(np.zeros(grid16.spectral_shape, dtype=complex), 16)
        with pytest.raises(CheckpointError, match=message):
            decode_field(mutate(buf))


class TestStateRecords:
    def test_round_trip(self, grid16, rng):
        s = random_state(grid16, rng)
        data, n = decode_state(encode_state(s.data, 16))
        assert n == 16
        np.testing.assert_allclose(data, s.data, atol=1e-6)

    def test_role_order_enforced(self, grid16, rng):
        buf = encode_state(random_state(grid16, rng).data, 16)
        size = len(buf) // 4
        swapped = buf[size : 2 * size] + buf[:size] + buf[2 * size :]
        with pytest.raises(CheckpointError, match="role"):
            decode_state(swapped)

    def test_trailing_bytes_rejected(self, grid16, rng):
        with pytest.raises(CheckpointError, match="trailing"):
            decode_state(encode_state(random_state(grid16, rng).data, 16) + b"\0")

    def test_shape_mismatch(self):
        with pytest.raises(CheckpointError):
            encode_state(np.zeros((4, 8, 5), dtype=complex), 16)


class TestFiles:
    def test_atomic_write_and_hash(self, tmp_path):
        atomic_write(tmp_path / "sub" / "a.txt", "hello")
        assert (tmp_path / "sub" / "a.txt").read_text() == "hello"
        assert sha256_file(tmp_path / "sub" / "a.txt") == (
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        )
        assert not [p for p in (tmp_path / "sub").iterdir() if p.name.startswith(".")]

    def test_csv_text_is_exact(self):
        text = csv_text(["a", "b"], [(0.1, True), (np.float64(2.0), np.bool_(False))])
        assert text == "a,b\n0.10000000000000001,true\n2,false\n"
        assert float(text.splitlines()[1].split(",")[0]) == 0.1
