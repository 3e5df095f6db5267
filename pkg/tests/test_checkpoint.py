import pytest
import torch

from synth import synthetic_pairs
from uwenhance.checkpoint import Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from uwenhance.config import PretrainConfig, Stage
from uwenhance.errors import FormatError, VersionError
from uwenhance.network import init_network, parameter_digest
from uwenhance.training import pretrain


@pytest.fixture
def trained(tiny_net):
    cfg = PretrainConfig(epochs=2, schedule=[Stage(0, 2, 16)], network=tiny_net)
    return pretrain(synthetic_pairs(4, 16), cfg)


def test_roundtrip_is_byte_stable(tmp_path, trained):
    path = save_checkpoint(trained, tmp_path / "a.ckpt")
    back = load_checkpoint(path)
    assert parameter_digest(back.model) == parameter_digest(trained.model)
    assert to_bytes(back) == path.read_bytes()
    assert back.step == trained.step and back.config == trained.config


def test_optimizer_state_restored(trained):
    back = from_bytes(to_bytes(trained))
    a, b = trained.optimizer_state, back.optimizer_state
    assert a["state"].keys() == b["state"].keys()
    for k in a["state"]:
        for slot in a["state"][k]:
            assert torch.equal(torch.as_tensor(a["state"][k][slot]), b["state"][k][slot])


def test_frozen_flags_survive(tiny_net):
    model = init_network(tiny_net)
    model.output.weight.requires_grad_(False)
    back = from_bytes(to_bytes(Checkpoint(model)))
    assert not back.model.output.weight.requires_grad
    assert back.optimizer_state is None


def test_corruption_detected(trained):
    data = to_bytes(trained)
    with pytest.raises(FormatError):
        from_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        from_bytes(b"garbage" * 10)
    with pytest.raises(FormatError):
        from_bytes(data[:16] + b"X" + data[17:])
    with pytest.raises(FormatError):
        from_bytes(data + b"\x00")


def test_version_mismatch(trained):
    data = bytearray(to_bytes(trained))
    data[7] = 2
    with pytest.raises(VersionError):
        from_bytes(bytes(data))
    text = to_bytes(trained).replace(b'"format_version":1', b'"format_version":9')
    with pytest.raises(VersionError):
        from_bytes(text)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "nope.ckpt")
