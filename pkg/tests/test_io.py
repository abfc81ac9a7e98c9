import numpy as np
import pytest

from dfibration import io
from dfibration import transform as tr
from dfibration.errors import ValidationError


def test_dftg_grid_roundtrip(tmp_path, rng):
    g = tr.GridFunction(rng.standard_normal((8, 8)), 1.5)
    io.write_dftg(tmp_path / "g.dftg", g)
    back = io.read_dftg(tmp_path / "g.dftg")
    assert isinstance(back, tr.GridFunction)
    assert back.r_dom == 1.5 and np.array_equal(back.values, g.values)


def test_dftg_sinogram_roundtrip(tmp_path, lines):
    sino = tr.projector(lines, 16, n_angles=12).forward(tr.phantom("gaussian", 16))
    io.write_dftg(tmp_path / "s.dftg", sino)
    back = io.read_dftg(tmp_path / "s.dftg")
    assert np.array_equal(back.values, sino.values)
    assert tuple(back.labels) == tuple(sino.labels)
    for a, b in zip(back.axes, sino.axes):
        assert np.array_equal(a, b)


def test_dftg_plain_and_header(tmp_path):
    a = np.arange(6.0).reshape(2, 3)
    io.write_dftg(tmp_path / "a.dftg", a)
    buf = (tmp_path / "a.dftg").read_bytes()
    assert buf[:4] == b"DFTG" and len(buf) == 4 + 4 + 8 + 48
    assert np.array_equal(io.read_dftg(tmp_path / "a.dftg"), a)


def test_dftg_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE")
    with pytest.raises(ValidationError):
        io.read_dftg(tmp_path / "x")
    (tmp_path / "y").write_bytes(b"DFTG" + (1).to_bytes(4, "little") + (4).to_bytes(4, "little"))
    with pytest.raises(ValidationError):
        io.read_dftg(tmp_path / "y")


def test_pgm_roundtrip(tmp_path):
    v = np.linspace(0, 1, 12).reshape(3, 4)
    io.write_pgm(tmp_path / "i.pgm", v)
    img = io.read_pgm(tmp_path / "i.pgm")
    assert img.shape == (3, 4)
    assert img[0, 0] == 0 and img[-1, -1] == 65535
    assert np.max(np.abs(img / 65535 - v)) <= 1 / 65535
    io.write_pgm(tmp_path / "c.pgm", np.ones((2, 2)))
    assert np.all(io.read_pgm(tmp_path / "c.pgm") == 0)
    with pytest.raises(ValidationError):
        io.write_pgm(tmp_path / "bad.pgm", np.ones(3))


def test_csv_and_gnuplot(tmp_path):
    io.write_csv(tmp_path / "d.csv", ["freq", "amplitude"], [(8.0, 0.1), (16.0, 0.05)])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines == ["freq,amplitude", "8.0,0.1", "16.0,0.05"]
    io.write_gnuplot_loglog(tmp_path / "p.gp", tmp_path / "d.csv", -1.0, 0.5)
    text = (tmp_path / "p.gp").read_text()
    assert "'d.csv'" in text and str(tmp_path) not in text
