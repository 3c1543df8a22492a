import numpy as np
import pytest

from binfmt import load_tensors, read_raw_image, save_tensors, write_raw_image
from errors import FormatError


def test_raw_image_round_trip(tmp_path):
    pixels = np.arange(3 * 4 * 5, dtype=np.uint8).reshape(3, 4, 5)
    write_raw_image(tmp_path / "x.bdna", pixels)
    data = (tmp_path / "x.bdna").read_bytes()
    assert data[:5] == b"BDNA1"
    assert data[5:17] == (3).to_bytes(4, "little") + (4).to_bytes(4, "little") + \
        (5).to_bytes(4, "little")
    back = read_raw_image(tmp_path / "x.bdna")
    assert back.dtype == np.uint8 and np.array_equal(back, pixels)


def test_raw_image_rejects_bad_input(tmp_path):
    with pytest.raises(FormatError):
        write_raw_image(tmp_path / "x.bdna", np.zeros((2, 2, 2), dtype=np.float64))
    (tmp_path / "bad.bdna").write_bytes(b"PNG..")
    with pytest.raises(FormatError, match="not a BDNA1"):
        read_raw_image(tmp_path / "bad.bdna")
    write_raw_image(tmp_path / "ok.bdna", np.zeros((1, 2, 2), dtype=np.uint8))
    (tmp_path / "cut.bdna").write_bytes((tmp_path / "ok.bdna").read_bytes()[:-1])
    with pytest.raises(FormatError, match="pixel bytes"):
        read_raw_image(tmp_path / "cut.bdna")


def test_tensors_keep_names_order_and_values(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"head.out.W": rng.normal(size=(3, 2)), "b": np.array([1e-300, -0.0, 7.5]),
               "scalar": np.array(2.0), "u1/text": rng.normal(size=(4, 8))}
    save_tensors(tmp_path / "w.bwts", tensors)
    back = load_tensors(tmp_path / "w.bwts")
    assert list(back) == list(tensors)
    for name, arr in tensors.items():
        assert back[name].shape == arr.shape
        assert back[name].tobytes() == arr.astype("<f8").tobytes()


def test_tensors_reject_bad_files(tmp_path):
    (tmp_path / "x.bwts").write_bytes(b"BDNA1\x00\x00\x00\x00")
    with pytest.raises(FormatError, match="not a BWTS1"):
        load_tensors(tmp_path / "x.bwts")
    save_tensors(tmp_path / "ok.bwts", {"a": np.ones((2, 2))})
    blob = (tmp_path / "ok.bwts").read_bytes()
    (tmp_path / "cut.bwts").write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        load_tensors(tmp_path / "cut.bwts")
    (tmp_path / "head.bwts").write_bytes(blob[:7])
    with pytest.raises(FormatError):
        load_tensors(tmp_path / "head.bwts")


def test_tensor_name_must_be_utf8(tmp_path):
    save_tensors(tmp_path / "ok.bwts", {"ab": np.zeros(1)})
    blob = (tmp_path / "ok.bwts").read_bytes().replace(b"ab", b"\xff\xfe", 1)
    (tmp_path / "bad.bwts").write_bytes(blob)
    with pytest.raises(FormatError, match="UTF-8"):
        load_tensors(tmp_path / "bad.bwts")
