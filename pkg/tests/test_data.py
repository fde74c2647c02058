import filecmp
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from sklearn.linear_model import LogisticRegression

from tripleqa.data.checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint, save_module
from tripleqa.data.dataset import DatasetError, Vocabulary, load_dataset, split_items
from tripleqa.data.synthetic import EVENT_NAMES, SyntheticSpec, generate_synthetic
from tripleqa.data.tensorfile import TensorFileError, decode_tensor, encode_tensor, read_tensor_file, write_tensor_file
from tripleqa.model import ModelConfig, TripleAttentionQA, collate


# -- tensor files ----------------------------------------------------------------------
def test_two_by_three_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_tensor_file(tmp_path / "a.tnsr", arr, {"k": 1})
    raw = (tmp_path / "a.tnsr").read_bytes()
    meta = b'{"k":1}'
    assert len(raw) == 4 + 4 + 8 + 24 + 4 + len(meta)
    assert raw[:8] == b"TNSR\x01\x01\x02\x00"
    assert struct.unpack("<2I", raw[8:16]) == (2, 3)
    assert raw[16:40] == arr.astype("<f4").tobytes()
    back = read_tensor_file(tmp_path / "a.tnsr")
    assert back.dtype == np.float32 and back.tobytes() == arr.tobytes()


def test_rank_zero():
    buf = encode_tensor(np.float32(2.5))
    assert len(buf) == 8 + 4 + 4 + 2
    arr, manifest = decode_tensor(buf)
    assert arr.shape == () and arr == 2.5 and manifest == {}


def test_bad_magic_reports_offset_zero():
    buf = bytearray(encode_tensor(np.zeros(3, np.float32)))
    buf[3:4] = b"X"
    with pytest.raises(TensorFileError) as exc:
        decode_tensor(bytes(buf))
    assert exc.value.offset == 0


def test_truncation_and_overflow_errors():
    buf = encode_tensor(np.zeros((4, 4), np.float32), {"a": "b"})
    with pytest.raises(TensorFileError):
        decode_tensor(buf[:30])
    with pytest.raises(TensorFileError, match="manifest"):
        decode_tensor(buf[:-2])
    huge = b"TNSR\x01\x01\x02\x00" + struct.pack("<2I", 2**31, 2**31)
    with pytest.raises(TensorFileError, match="exceeds") as exc:
        decode_tensor(huge)
    assert exc.value.offset == 16


def test_rank_limit():
    with pytest.raises(ValueError):
        encode_tensor(np.zeros((1,) * 9, np.float32))


@settings(max_examples=300, deadline=None)
@given(
    hnp.arrays(
        dtype=st.sampled_from([np.float32, np.float64]),
        shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
        elements=st.floats(allow_nan=True, allow_infinity=True, width=32),
    ),
    st.dictionaries(st.text(max_size=5), st.integers() | st.text(max_size=5), max_size=3),
)
def test_round_trip_bit_exact(arr, manifest):
    back, meta = decode_tensor(encode_tensor(arr, manifest))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    assert meta == manifest


def test_ten_thousand_random_round_trips():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        shape = tuple(rng.integers(0, 5, size=rng.integers(0, 5)))
        arr = rng.standard_normal(shape).astype(np.float32)
        assert decode_tensor(encode_tensor(arr))[0].tobytes() == arr.tobytes()


# -- dataset loading ---------------------------------------------------------------------
def _write_dataset(tmp_path, records, vocab=("<pad>", "<unk>", "what", "is", "it", "a", "b", "c", "d", "e")):
    Vocabulary(list(vocab)).save(tmp_path / "vocab.txt")
    path = tmp_path / "data.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path


def _record(qid="x", **kw):
    rec = {
        "qid": qid,
        "question": "what is it",
        "answers": ["a", "b", "c", "d", "e"],
        "correct": 2,
        "subtitle": "it is a zebra",
        "video_features": [[0.0, 1.0], [1.0, 0.0]],
        "audio_features": [[0.5] * 3],
    }
    rec.update(kw)
    return rec


def test_load_two_lines(tmp_path):
    items = load_dataset(_write_dataset(tmp_path, [_record("a"), _record("b")]))
    assert [it.qid for it in items] == ["a", "b"]
    assert items[0].question.tolist() == [2, 3, 4]
    assert items[0].subtitle.tolist() == [4, 3, 5, 1]  # "zebra" is unknown
    assert items[0].video_features.shape == (2, 2)


def test_four_answers_cites_line(tmp_path):
    with pytest.raises(DatasetError, match="line 1") as exc:
        load_dataset(_write_dataset(tmp_path, [_record(answers=["a", "b", "c", "d"])]))
    assert exc.value.line == 1


def test_correct_out_of_range_and_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(_write_dataset(tmp_path, [_record("a"), _record("b", correct=5)]))
    with pytest.raises(DatasetError, match="not found"):
        load_dataset(_write_dataset(tmp_path, [_record(audio_features="features/none.tnsr")]))


def test_feature_files_resolve_relative_to_dataset(tmp_path):
    (tmp_path / "f").mkdir()
    write_tensor_file(tmp_path / "f" / "a.tnsr", np.ones((4, 3), np.float32))
    items = load_dataset(_write_dataset(tmp_path, [_record(audio_features="f/a.tnsr")]))
    assert items[0].audio_features.shape == (4, 3)


def test_missing_audio_policy(tmp_path):
    path = _write_dataset(tmp_path, [_record("a"), _record("b", audio_features=None)])
    assert [it.qid for it in load_dataset(path)] == ["a"]
    items = load_dataset(path, missing_audio="zero", audio_dim=3)
    assert not items[1].has_audio and not items[1].audio_features.any()
    with pytest.raises(ValueError):
        load_dataset(path, missing_audio="drop")


def test_split_is_deterministic_and_disjoint(tmp_path):
    items = load_dataset(_write_dataset(tmp_path, [_record(f"q{i}") for i in range(60)]))
    train, val = split_items(items)
    assert len(train) + len(val) == 60 and 0 < len(val) < 30
    assert not {it.qid for it in train} & {it.qid for it in val}
    assert [it.qid for it in split_items(items)[1]] == [it.qid for it in val]


def test_with_options_remaps_label(tmp_path):
    item = load_dataset(_write_dataset(tmp_path, [_record()]))[0]
    moved = item.with_options([2, 0, 1, 3, 4])
    assert moved.correct == 0
    assert moved.answers[0].tolist() == item.answers[2].tolist()


# -- checkpoints ---------------------------------------------------------------------------
def _tiny_model(hidden=4, seed=0):
    cfg = ModelConfig(vocab_size=20, lambdas=(1, 1, 1), embed_dim=6, hidden_dim=hidden, video_in_dim=2, audio_in_dim=3)
    return cfg, TripleAttentionQA(cfg, seed=seed)


def test_checkpoint_save_load_save_identical(tmp_path):
    cfg, model = _tiny_model()
    save_module(model, cfg.to_dict(), tmp_path / "a")
    _, other = _tiny_model(seed=1)
    load_into(other, tmp_path / "a", cfg.to_dict())
    save_module(other, cfg.to_dict(), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in cmp.subdirs.values():
        assert not sub.diff_files and not sub.left_only and not sub.right_only


def test_checkpoint_logits_unchanged(tmp_path):
    cfg, model = _tiny_model()
    items = load_dataset(_write_dataset(tmp_path, [_record("a"), _record("b", correct=0)]))
    cfg = ModelConfig(vocab_size=10, lambdas=(1, 1, 1), embed_dim=6, hidden_dim=4, video_in_dim=2, audio_in_dim=3)
    model = TripleAttentionQA(cfg, seed=3)
    model.eval()
    batch = collate(items, cfg)
    before = model(batch)[0].data.copy()
    save_module(model, cfg.to_dict(), tmp_path / "ck")
    fresh = TripleAttentionQA(cfg, seed=9)
    load_into(fresh, tmp_path / "ck", cfg.to_dict())
    fresh.eval()
    assert fresh(batch)[0].data.tobytes() == before.tobytes()


def test_missing_parameter_file_is_named(tmp_path):
    cfg, model = _tiny_model()
    save_module(model, cfg.to_dict(), tmp_path / "ck")
    victim = sorted((tmp_path / "ck" / "params").iterdir())[0]
    victim.unlink()
    with pytest.raises(CheckpointError, match=victim.name.removesuffix(".tnsr")):
        load_checkpoint(tmp_path / "ck")


def test_hidden_dim_mismatch(tmp_path):
    cfg, model = _tiny_model(hidden=4)
    save_module(model, cfg.to_dict(), tmp_path / "ck")
    cfg8, model8 = _tiny_model(hidden=8)
    with pytest.raises(CheckpointError, match="hidden_dim"):
        load_into(model8, tmp_path / "ck", cfg8.to_dict())


def test_version_mismatch(tmp_path):
    save_checkpoint({"w": np.ones(2, np.float32)}, {}, tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    manifest["format_version"] = 99
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ck")


# -- synthetic generation ----------------------------------------------------------------------
def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generation_is_byte_deterministic(tmp_path):
    spec = SyntheticSpec(n_items=500, seed=11)
    generate_synthetic(spec, tmp_path / "a")
    generate_synthetic(spec, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(deciding_modality="smell")
    with pytest.raises(ValueError):
        SyntheticSpec(n_event_classes=4)
    with pytest.raises(ValueError):
        SyntheticSpec(clip_frames=100)


def test_generated_items_are_well_formed(make_synthetic):
    path = make_synthetic(n_items=120, seed=2)
    items = load_dataset(path)
    assert len(items) == 120
    records = [json.loads(line) for line in path.read_text().splitlines()]
    for item, rec in zip(items, records):
        opts = rec["meta"]["options"]
        assert opts[item.correct] == rec["meta"]["event_class"]
        assert len(set(opts)) == 5
        assert item.audio_features.shape == (3, 128)
    # option order is not biased towards a slot
    counts = np.bincount([it.correct for it in items], minlength=5)
    assert counts.min() > 10


def _class_features(items, vocab):
    event_ids = [vocab.index[name] for name in EVENT_NAMES[:5]]
    rows = {}
    for it in items:
        sub = np.array([np.sum(it.subtitle == t) for t in event_ids], dtype=float)
        rows.setdefault("video", []).append(np.concatenate([it.video_features.mean(0), it.video_features.max(0)]))
        rows.setdefault("subtitle", []).append(sub)
        rows.setdefault("audio", []).append(it.audio_features.mean(0))
    return {k: np.array(v) for k, v in rows.items()}


def _held_out_accuracy(path, modality):
    items = load_dataset(path)
    vocab = Vocabulary.load(path.parent / "vocab.txt")
    feats = _class_features(items, vocab)[modality]
    y = np.array([it.meta["event_class"] for it in items])
    n = len(items) * 2 // 3
    mean, std = feats[:n].mean(0), feats[:n].std(0) + 1e-6
    clf = LogisticRegression(max_iter=2000).fit((feats[:n] - mean) / std, y[:n])
    return clf.score((feats[n:] - mean) / std, y[n:])


@pytest.mark.parametrize("deciding", ["audio", "video", "subtitle"])
def test_only_the_deciding_modality_carries_the_class(make_synthetic, deciding):
    path = make_synthetic(n_items=1200, deciding_modality=deciding, seed=5)
    for modality in ("video", "subtitle", "audio"):
        acc = _held_out_accuracy(path, modality)
        if modality == deciding:
            # the same classifier finds the class where it was planted
            assert acc > 0.6, (modality, acc)
        else:
            assert abs(acc - 0.2) <= 0.05, (modality, acc)
