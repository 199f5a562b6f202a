import json
import struct

import numpy as np
import pytest

from twa.checkpoints import (
    SamplingPolicy,
    decode_twa1,
    encode_twa1,
    load_set,
    read_twa1,
    save_checkpoint,
    should_sample,
    write_twa1,
)
from twa.errors import (
    BadMagicError,
    CorruptCheckpointError,
    DimensionMismatchError,
    InputError,
    MissingCheckpointError,
    NumericError,
    StorageError,
    TruncatedCheckpointError,
)


def test_every_epoch_samples_once_per_epoch():
    policy = SamplingPolicy("every_n_epochs", 1)
    spe = 7
    hits = [(step - 1) // spe for step in range(1, 5 * spe + 1)
            if should_sample(policy, (step - 1) // spe, step, spe)]
    assert hits == [0, 1, 2, 3, 4]


def test_every_n_epochs_skips():
    policy = SamplingPolicy("every_n_epochs", 2)
    spe = 3
    hits = [step for step in range(1, 13) if should_sample(policy, (step - 1) // spe, step, spe)]
    assert hits == [6, 12]


def test_every_n_steps():
    policy = SamplingPolicy("every_n_steps", 100)
    assert not should_sample(policy, 2, 250, 120)
    assert should_sample(policy, 2, 300, 120)


def test_five_times_per_epoch():
    spe = 50
    policy = SamplingPolicy("every_n_steps", spe // 5)
    hits = [s for s in range(1, spe + 1) if should_sample(policy, 0, s, spe)]
    assert hits == [10, 20, 30, 40, 50]


def test_limit_caps_head_sampling():
    policy = SamplingPolicy("every_n_steps", 1, "head", limit=3)
    assert should_sample(policy, 0, 4, 10, taken=2)
    assert not any(should_sample(policy, 0, s, 10, taken=3) for s in range(1, 50))


@pytest.mark.parametrize("kwargs", [{"n": 0}, {"limit": 0}, {"mode": "hourly"}, {"phase": "mid"}])
def test_policy_validation(kwargs):
    with pytest.raises(InputError):
        SamplingPolicy(**kwargs)


def test_manifest_count_matches_sampling_events(tmp_path):
    policy = SamplingPolicy("every_n_steps", 3, "head", limit=4)
    taken = 0
    for step in range(1, 40):
        if should_sample(policy, 0, step, 100, taken):
            save_checkpoint(tmp_path, np.full(5, float(step)), step=step, epoch=0)
            taken += 1
    assert taken == 4
    assert load_set(tmp_path / "manifest.json").n == taken


def test_tail_retention_keeps_latest(tmp_path):
    for step in range(1, 6):
        save_checkpoint(tmp_path, np.full(3, float(step)), step=step, epoch=0, keep_last=2)
    cs = load_set(tmp_path / "manifest.json")
    assert [e.step for e in cs.entries] == [4, 5]
    assert len(list(tmp_path.glob("*.twa1"))) == 2


def test_header_layout_is_bit_exact():
    buf = encode_twa1([1.0, -2.5])
    assert buf[:4] == b"TWA1"
    assert struct.unpack("<I", buf[4:8]) == (1,)
    assert struct.unpack("<Q", buf[8:16]) == (2,)
    assert buf[16:] == struct.pack("<2f", 1.0, -2.5)


def test_hand_written_fixture(tmp_path):
    p = tmp_path / "one.twa1"
    p.write_bytes(b"TWA1" + (1).to_bytes(4, "little") + (1).to_bytes(8, "little")
                  + struct.pack("<f", 1.0))
    assert read_twa1(p).tolist() == [1.0]


@pytest.mark.parametrize("D", [1, 17, 10_000])
def test_round_trip_quantization(tmp_path, D):
    w = np.random.default_rng(D).standard_normal(D) * 10
    out = read_twa1(write_twa1(tmp_path / "w.twa1", w))
    assert out.dtype == np.float64
    np.testing.assert_array_equal(out, w.astype(np.float32).astype(np.float64))
    assert np.all(np.abs(out - w) <= np.abs(w) * 2.0**-24)


def test_overflowing_value_rejected():
    with pytest.raises(NumericError):
        encode_twa1([1e300])


def test_bad_magic():
    buf = bytearray(encode_twa1([1.0]))
    buf[:4] = b"XXXX"
    with pytest.raises(BadMagicError):
        decode_twa1(bytes(buf))


def test_truncated_payload_and_header():
    buf = encode_twa1([1.0, 2.0, 3.0])
    with pytest.raises(TruncatedCheckpointError):
        decode_twa1(buf[:-2])
    with pytest.raises(TruncatedCheckpointError):
        decode_twa1(buf[:10])


def test_unsupported_version_is_corrupt():
    buf = bytearray(encode_twa1([1.0]))
    buf[4:8] = (2).to_bytes(4, "little")
    with pytest.raises(CorruptCheckpointError):
        decode_twa1(bytes(buf))


def test_save_two_lists_in_step_order(tmp_path):
    save_checkpoint(tmp_path, [1.0, 2.0], step=20, epoch=1)
    save_checkpoint(tmp_path, [3.0, 4.0], step=10, epoch=0, val_metric=0.5)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["D"] == 2
    assert [e["step"] for e in doc["entries"]] == [10, 20]
    assert doc["entries"][0]["val_metric"] == 0.5 and doc["entries"][1]["val_metric"] is None
    cs = load_set(tmp_path / "manifest.json")
    np.testing.assert_array_equal(cs.matrix(), [[3, 4], [1, 2]])


def test_save_into_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    with pytest.raises(StorageError):
        save_checkpoint(blocker / "sub", [1.0], step=1, epoch=0)


def test_load_set_happy_path(write_set):
    cs = write_set(np.random.default_rng(0).standard_normal((3, 17)))
    assert cs.n == 3 and cs.D == 17


def test_load_set_truncated_file_names_path(write_set):
    cs = write_set(np.ones((3, 17)))
    victim = cs.resolve(1)
    victim.write_bytes(victim.read_bytes()[:-4])
    with pytest.raises(TruncatedCheckpointError) as exc:
        load_set(cs.manifest_path)
    assert str(victim) in str(exc.value)


def test_load_set_missing_file(write_set):
    cs = write_set(np.ones((2, 4)))
    cs.resolve(0).unlink()
    with pytest.raises(MissingCheckpointError):
        load_set(cs.manifest_path)


def test_load_set_mixed_dimensions(tmp_path):
    write_twa1(tmp_path / "a.twa1", np.zeros(17))
    write_twa1(tmp_path / "b.twa1", np.zeros(18))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"D": 17, "entries": [
        {"step": 1, "epoch": 0, "val_metric": None, "path": "a.twa1"},
        {"step": 2, "epoch": 0, "val_metric": None, "path": "b.twa1"}]}))
    with pytest.raises(DimensionMismatchError):
        load_set(manifest)


def test_save_rejects_dimension_change(tmp_path):
    save_checkpoint(tmp_path, np.zeros(3), step=1, epoch=0)
    with pytest.raises(DimensionMismatchError):
        save_checkpoint(tmp_path, np.zeros(4), step=2, epoch=0)


def test_error_classes_are_distinct():
    kinds = {MissingCheckpointError, BadMagicError, TruncatedCheckpointError, DimensionMismatchError}
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)
