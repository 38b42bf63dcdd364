import numpy as np
import pytest

from kgengine.checkpoint import (BAD_MAGIC, KGE_HEADER, TRAILING_DATA, TRUNCATED,
                                 UNSUPPORTED_VERSION, load_checkpoint, load_typing_checkpoint,
                                 save_checkpoint, save_typing_checkpoint)
from kgengine.common import CheckpointError
from kgengine.models import COMPLEX, DISTMULT, PAIRRE, ROTATE, TRANSE, init_model
from kgengine.typing_model import TypingNetwork

KIND_NORMS = [(TRANSE, 1), (TRANSE, 2), (DISTMULT, 1), (COMPLEX, 1), (ROTATE, 1), (PAIRRE, 1)]


def assert_same_model(loaded, model):
    assert (loaded.kind, loaded.norm, loaded.gamma) == (model.kind, model.norm, model.gamma)
    assert loaded.table.variant == model.table.variant
    assert list(loaded.parameters()) == list(model.parameters())
    for name, param in model.parameters().items():
        assert loaded.parameters()[name].tobytes() == param.tobytes(), name


@pytest.fixture
def checkpoint_path(tmp_path):
    model = init_model(PAIRRE, 7, 3, 6, rank=2, rng=np.random.default_rng(0))
    path = tmp_path / 'model.ckpt'
    save_checkpoint(model, str(path))
    return path


class TestModelCheckpoint:

    @pytest.mark.parametrize("kind,norm", KIND_NORMS)
    @pytest.mark.parametrize("rank", [0, 3])
    def test_round_trip_is_bitwise(self, tmp_path, kind, norm, rank):
        model = init_model(kind, 9, 4, 6, rank=rank, gamma=9.0, norm=norm, rng=np.random.default_rng(3))
        path = str(tmp_path / 'model.ckpt')
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert_same_model(loaded, model)

        heads, relations, tails = np.array([0, 3, 8]), np.array([0, 1, 3]), np.array([5, 5, 2])
        assert loaded.score(heads, relations, tails).tobytes() == model.score(heads, relations, tails).tobytes()

    def test_identity_basis(self, tmp_path):
        model = init_model(DISTMULT, 5, 2, 4, rank=4, rng=np.random.default_rng(0), allow_identity=True)
        path = str(tmp_path / 'model.ckpt')
        save_checkpoint(model, path)
        assert_same_model(load_checkpoint(path), model)

    def test_file_size(self, checkpoint_path):
        # factors 7x2, basis 2x6, PairRE relations 3x12
        assert checkpoint_path.stat().st_size == KGE_HEADER.size + 4 * (7 * 2 + 2 * 6 + 3 * 12)

    def test_bad_magic(self, checkpoint_path):
        data = checkpoint_path.read_bytes()
        checkpoint_path.write_bytes(b'XXXX' + data[4:])
        with pytest.raises(CheckpointError) as error:
            load_checkpoint(str(checkpoint_path))
        assert error.value.reason == BAD_MAGIC

    def test_typing_magic_is_rejected(self, tmp_path):
        path = str(tmp_path / 'typing.ckpt')
        save_typing_checkpoint(TypingNetwork.initialize(2, rng=np.random.default_rng(0)), path)
        with pytest.raises(CheckpointError, match=BAD_MAGIC):
            load_checkpoint(path)

    def test_unsupported_version(self, checkpoint_path):
        data = checkpoint_path.read_bytes()
        checkpoint_path.write_bytes(data[:4] + (2).to_bytes(4, 'little') + data[8:])
        with pytest.raises(CheckpointError) as error:
            load_checkpoint(str(checkpoint_path))
        assert error.value.reason == UNSUPPORTED_VERSION

    @pytest.mark.parametrize("keep", [2, 6, 20, -1])
    def test_truncated(self, checkpoint_path, keep):
        data = checkpoint_path.read_bytes()
        checkpoint_path.write_bytes(data[:keep])
        with pytest.raises(CheckpointError) as error:
            load_checkpoint(str(checkpoint_path))
        assert error.value.reason == TRUNCATED

    def test_trailing_data(self, checkpoint_path):
        checkpoint_path.write_bytes(checkpoint_path.read_bytes() + b'\x00')
        with pytest.raises(CheckpointError) as error:
            load_checkpoint(str(checkpoint_path))
        assert error.value.reason == TRAILING_DATA

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(str(tmp_path / 'nothing.ckpt'))


class TestTypingCheckpoint:

    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_round_trip_is_bitwise(self, tmp_path, layers):
        network = TypingNetwork.initialize(3, layers=layers, edge_dim=5, node_dim=5, rng=np.random.default_rng(1))
        path = str(tmp_path / 'typing.ckpt')
        save_typing_checkpoint(network, path)
        loaded = load_typing_checkpoint(path)
        assert (loaded.layers, loaded.relation_count, loaded.edge_dim) == (layers, 3, 5)
        assert list(loaded.parameters()) == list(network.parameters())
        for name, param in network.parameters().items():
            assert loaded.parameters()[name].tobytes() == param.tobytes(), name

    def test_truncated(self, tmp_path):
        path = tmp_path / 'typing.ckpt'
        save_typing_checkpoint(TypingNetwork.initialize(2, rng=np.random.default_rng(0)), str(path))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointError, match=TRUNCATED):
            load_typing_checkpoint(str(path))

    def test_model_magic_is_rejected(self, checkpoint_path):
        with pytest.raises(CheckpointError, match=BAD_MAGIC):
            load_typing_checkpoint(str(checkpoint_path))
