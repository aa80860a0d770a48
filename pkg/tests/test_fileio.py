import json
import os

import numpy as np
import pytest

from seqlift.fileio import (
    atomic_write_text,
    canonical_json,
    format_float,
    pack_array,
    sha256_of,
    unpack_array,
)


def test_canonical_json_sorts_keys_and_is_compact():
    text = canonical_json({"b": 1, "a": [1, 2], "c": {"y": 0.5, "x": None}})
    assert text == '{"a":[1,2],"b":1,"c":{"x":null,"y":0.5}}'


def test_canonical_json_stable_for_equal_dicts():
    a = {"k": 1, "j": 2}
    b = {"j": 2, "k": 1}
    assert canonical_json(a) == canonical_json(b)
    assert sha256_of(a) == sha256_of(b)


def test_sha256_frozen_value():
    # regression guard: artifact digests must not drift across versions
    assert sha256_of({"a": 1}) == (
        "015abd7f5cc57a2dd94b7590f04ad8084273905ee33ec5cebeae62276a97f862"
    )


def test_format_float_round_trips():
    for v in [0.1, 1e-9, 3.141592653589793, -2.5e300, 143.79514913059157]:
        assert float(format_float(v)) == v


def test_format_float_integers_stay_floats():
    assert format_float(2.0) == "2.0"


def test_pack_unpack_array_round_trip():
    rng = np.random.default_rng(0)
    for dtype in (np.float64, np.float32, np.int64):
        a = rng.standard_normal((3, 4)).astype(dtype)
        packed = pack_array(a)
        b = unpack_array(packed)
        assert b.dtype == a.dtype
        assert b.shape == a.shape
        assert np.array_equal(a, b)


def test_pack_array_json_safe():
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    text = json.dumps(pack_array(a))
    b = unpack_array(json.loads(text))
    assert np.array_equal(a, b)


def test_atomic_write_text(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write_text(str(p), "hello\n")
    assert p.read_text() == "hello\n"
    atomic_write_text(str(p), "replaced\n")
    assert p.read_text() == "replaced\n"
    assert os.listdir(tmp_path / "sub") == ["f.txt"]  # no temp files left


def test_canonical_json_rejects_nan():
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})
