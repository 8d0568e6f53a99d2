"""Container and checkpoint serialization round-trips."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spkfuse import tensorio
from spkfuse.errors import DataError
from spkfuse.network import SpeakerEmbeddingModel, model_from_checkpoint

from conftest import tiny_config

tensor_names = st.text(
    alphabet=st.characters(min_codepoint=33, max_codepoint=126), min_size=1,
    max_size=20)


def _sample_tensors(rng):
    return {
        "scalar": np.array(3.5),
        "vector": rng.normal(size=7),
        "matrix": rng.normal(size=(3, 4)),
        "cube": rng.normal(size=(2, 3, 2)),
    }


def test_container_round_trip_is_bitwise(tmp_path, rng):
    path = tmp_path / "t.tensors"
    tensors = _sample_tensors(rng)
    tensorio.save_tensors(path, tensors)
    loaded = tensorio.load_tensors(path)
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        assert loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == np.asarray(arr, dtype=np.float64).tobytes()


def test_container_rejects_bad_magic(tmp_path, rng):
    path = tmp_path / "t.tensors"
    tensorio.save_tensors(path, _sample_tensors(rng))
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        tensorio.load_tensors(path)


def test_container_rejects_unknown_version(tmp_path, rng):
    path = tmp_path / "t.tensors"
    tensorio.save_tensors(path, _sample_tensors(rng))
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        tensorio.load_tensors(path)


def test_container_rejects_truncation(tmp_path, rng):
    path = tmp_path / "t.tensors"
    tensorio.save_tensors(path, _sample_tensors(rng))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 5])
    with pytest.raises(DataError):
        tensorio.load_tensors(path)


def test_container_rejects_trailing_bytes(tmp_path, rng):
    path = tmp_path / "t.tensors"
    tensorio.save_tensors(path, _sample_tensors(rng))
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(DataError, match="trailing"):
        tensorio.load_tensors(path)


def test_checkpoint_header_round_trip(tmp_path, rng):
    path = tmp_path / "m.ckpt"
    header = {"alpha": "1", "beta": "two words", "gamma": "3.5"}
    tensors = {"w": rng.normal(size=(2, 2))}
    tensorio.save_checkpoint(path, tensors, header)
    loaded_tensors, loaded_header = tensorio.load_checkpoint(path)
    assert loaded_header == header
    assert loaded_tensors["w"].tobytes() == tensors["w"].tobytes()


def test_checkpoint_rejects_newline_in_header(tmp_path):
    with pytest.raises(DataError):
        tensorio.save_checkpoint(tmp_path / "m.ckpt", {}, {"a": "x\ny"})


def test_model_checkpoint_rebuilds_identical_model(tmp_path, rng):
    cfg = tiny_config()
    model = SpeakerEmbeddingModel(cfg, seed=5)
    coeffs = rng.normal(size=(cfg.feat_dim, 9))
    before = model.embed(coeffs)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(path, iteration=17)
    rebuilt, header = model_from_checkpoint(path)
    assert header["iteration"] == "17"
    assert rebuilt.cfg == cfg
    after = rebuilt.embed(coeffs)
    assert before.tobytes() == after.tobytes()


def test_model_checkpoint_detects_topology_edit(tmp_path):
    model = SpeakerEmbeddingModel(tiny_config(), seed=0)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(path)
    raw = path.read_bytes()
    # change a topology field without updating the stored hash
    patched = raw.replace(b"net.channels=8", b"net.channels=4", 1)
    assert patched != raw
    path.write_bytes(patched)
    with pytest.raises(DataError, match="hash"):
        model_from_checkpoint(path)


def test_load_state_dict_rejects_shape_mismatch():
    model = SpeakerEmbeddingModel(tiny_config(), seed=0)
    state = model.state_dict()
    key = next(iter(state))
    state[key] = np.zeros(state[key].shape + (1,))
    with pytest.raises(DataError):
        model.load_state_dict(state)


def test_load_state_dict_rejects_missing_and_extra_names():
    model = SpeakerEmbeddingModel(tiny_config(), seed=0)
    state = model.state_dict()
    state.pop(next(iter(state)))
    state["not_a_param"] = np.zeros(1)
    with pytest.raises(DataError, match="topology"):
        model.load_state_dict(state)


@given(st.dictionaries(tensor_names, st.integers(min_value=0, max_value=4),
                       min_size=0, max_size=5))
@settings(deadline=None, max_examples=40)
def test_fuzz_container_round_trip(tmp_path_factory, name_to_rank):
    rng = np.random.default_rng(0)
    tensors = {}
    for name, rank in name_to_rank.items():
        shape = tuple(rng.integers(1, 4, size=rank))
        tensors[name] = rng.normal(size=shape)
    path = tmp_path_factory.mktemp("fuzz") / "t.tensors"
    tensorio.save_tensors(path, tensors)
    loaded = tensorio.load_tensors(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].tobytes() == tensors[name].tobytes()
        assert loaded[name].shape == tensors[name].shape
