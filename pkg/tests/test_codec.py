"""Weight codec tests: layout transpositions, binary format, C header, config."""

import json

import numpy as np
import pytest

import oracles
from tinyvision import codec, model
from tinyvision.codec import (ConfigInvalid, HeaderMeta, MalformedHeader,
                              TruncatedWeights, WeightBundle, decode_bin,
                              emit_c_header, emit_config, encode_bin,
                              parse_config)
from tinyvision.model import ModelSpec, build_model

REFERENCE_CONFIG_TEXT = """{
  "version": 68,
  "inputSize": 64,
  "numClasses": 3,
  "classLabels": ["0Blank", "1Cup", "2Pen"],
  "learningRate": 0.0003,
  "batchSize": 6,
  "targetEpochs": 20,
  "useAugmentation": true,
  "useGrayscale": false,
  "imagesToPsram": true,
  "validationImages": 3,
  "weightsFile": "myWeights.bin"
}"""


def ref_meta(version=68):
    return HeaderMeta(version=version, input_size=64, num_classes=3,
                      class_labels=["0Blank", "1Cup", "2Pen"], grayscale=False)


def random_bundle(rng, input_size=64, channels=3, classes=3, version=1):
    meta = HeaderMeta(version=version, input_size=input_size, num_classes=classes,
                      class_labels=[f"c{i}" for i in range(classes)],
                      grayscale=(channels == 1))
    spec = meta.to_spec()
    weights = build_model(spec, seed=int(rng.integers(1 << 30)))
    # randomize biases too so no array is trivially zero
    weights.conv1_b = rng.standard_normal(spec.conv1_filters).astype(np.float32)
    weights.conv2_b = rng.standard_normal(spec.conv2_filters).astype(np.float32)
    weights.dense_b = rng.standard_normal(classes).astype(np.float32)
    return codec.weights_to_bundle(weights, meta)


# ----------------------------------------------------------------------
# transpositions, checked by independent index enumeration
# ----------------------------------------------------------------------

class TestTranspositions:
    def test_conv1_every_index(self, rng):
        C, F = 3, 4
        w = rng.standard_normal((3, 3, C, F)).astype(np.float32)
        dev = codec.transpose_conv1_to_device(w).ravel()
        for ky in range(3):
            for kx in range(3):
                for ic in range(C):
                    for f in range(F):
                        assert dev[oracles.conv1_device_index(f, ky, kx, ic, C)] == w[ky, kx, ic, f]

    def test_conv1_reference_example(self):
        # training element (ky=0, kx=0, ic=0, f=1) lands at flat 27 for C = 3
        w = np.zeros((3, 3, 3, 4), dtype=np.float32)
        w[0, 0, 0, 1] = 42.0
        assert codec.transpose_conv1_to_device(w).ravel()[27] == 42.0
        assert oracles.conv1_device_index(1, 0, 0, 0, 3) == 27

    def test_conv2_every_index(self, rng):
        IC, F = 4, 8
        w = rng.standard_normal((3, 3, IC, F)).astype(np.float32)
        dev = codec.transpose_conv2_to_device(w).ravel()
        for ky in range(3):
            for kx in range(3):
                for ic in range(IC):
                    for f in range(F):
                        assert dev[oracles.conv2_device_index(f, ic, ky, kx, IC)] == w[ky, kx, ic, f]

    def test_conv2_reference_example(self):
        # training element (ky=0, kx=0, ic=1, f=0) lands at flat 9 for IC = 4
        w = np.zeros((3, 3, 4, 8), dtype=np.float32)
        w[0, 0, 1, 0] = 7.0
        assert codec.transpose_conv2_to_device(w).ravel()[9] == 7.0
        assert oracles.conv2_device_index(0, 1, 0, 0, 4) == 9

    def test_dense_every_index(self, rng):
        side, F, K = 5, 8, 3
        w = rng.standard_normal((side * side * F, K)).astype(np.float32)
        dev = codec.transpose_dense_to_device(w, side, F).ravel()
        for y in range(side):
            for x in range(side):
                for f in range(F):
                    for k in range(K):
                        flat = oracles.training_dense_flat_index(y, x, f, side, F)
                        assert dev[oracles.dense_device_index(k, f, y, x, F, side)] == w[flat, k]

    def test_dense_reference_example(self):
        # (y=0, x=1, f=0, cls=2) at side 29, F 8: training row 8, device flat 13457
        side, F, K = 29, 8, 3
        w = np.zeros((side * side * F, K), dtype=np.float32)
        row = oracles.training_dense_flat_index(0, 1, 0, side, F)
        assert row == 8
        w[row, 2] = 3.0
        dev = codec.transpose_dense_to_device(w, side, F).ravel()
        target = oracles.dense_device_index(2, 0, 0, 1, F, side)
        assert target == 2 * 6728 + 1 == 13457
        assert dev[target] == 3.0

    def test_round_trips_bitwise(self, rng):
        for _ in range(100):
            c1 = rng.standard_normal((3, 3, 3, 4)).astype(np.float32)
            c2 = rng.standard_normal((3, 3, 4, 8)).astype(np.float32)
            d = rng.standard_normal((5 * 5 * 8, 3)).astype(np.float32)
            np.testing.assert_array_equal(
                codec.transpose_conv1_from_device(codec.transpose_conv1_to_device(c1)), c1)
            np.testing.assert_array_equal(
                codec.transpose_conv2_from_device(codec.transpose_conv2_to_device(c2)), c2)
            np.testing.assert_array_equal(
                codec.transpose_dense_from_device(codec.transpose_dense_to_device(d, 5, 8)), d)

    def test_permutation_is_bijective(self, rng):
        # distinct values in, distinct values out, same multiset
        w = np.arange(3 * 3 * 3 * 4, dtype=np.float32).reshape(3, 3, 3, 4)
        dev = codec.transpose_conv1_to_device(w)
        assert sorted(dev.ravel().tolist()) == sorted(w.ravel().tolist())


class TestCrossLayoutForward:
    """Device-loop-order forward on the bundle == engine forward on the weights."""

    @pytest.mark.parametrize("size,channels", [(12, 3), (16, 3), (12, 1)])
    def test_probs_agree(self, rng, size, channels):
        bundle = random_bundle(rng, input_size=size, channels=channels)
        weights = codec.bundle_to_weights(bundle)
        image = rng.random((size, size, channels)).astype(np.float32)

        # float64 on both sides: any disagreement is an indexing bug
        w64 = model.ModelWeights(**{k: v.astype(np.float64)
                                    for k, v in weights.arrays().items()})
        probs_engine, _ = model.forward(w64, image.astype(np.float64))
        probs_device = oracles.device_forward(bundle, image)
        np.testing.assert_allclose(probs_device, probs_engine, atol=1e-9)


# ----------------------------------------------------------------------
# myWeights.bin
# ----------------------------------------------------------------------

class TestBinFormat:
    def test_layout_of_encoded_file(self, rng):
        bundle = random_bundle(rng)
        blob = encode_bin(bundle)
        lines = blob.split(b"\n", 3)
        assert lines[0] == codec.SENTINEL_BEGIN.encode()
        header = json.loads(lines[1])
        assert header["inputSize"] == 64 and header["numClasses"] == 3
        assert lines[2] == codec.SENTINEL_END.encode()
        assert len(lines[3]) == 4 * 20595

    def test_reference_size(self, rng):
        bundle = random_bundle(rng)
        blob = encode_bin(bundle)
        header_len = len(blob) - 4 * 20595
        assert len(blob) == header_len + 82380
        assert len(blob) == codec.expected_bin_size(bundle.meta)
        assert 82380 < len(blob) < 85000  # "about 83 KB"

    def test_round_trip_bitwise(self, rng):
        for i in range(100):
            size = int(rng.choice([8, 12, 16]))
            channels = int(rng.choice([1, 3]))
            classes = int(rng.integers(2, 6))
            bundle = random_bundle(rng, input_size=size, channels=channels, classes=classes)
            blob = encode_bin(bundle)
            back = decode_bin(blob)
            assert back.meta == bundle.meta
            for (_, a), (_, b) in zip(bundle.arrays(), back.arrays()):
                np.testing.assert_array_equal(a, b)
            assert encode_bin(back) == blob

    def test_custom_sentinels(self, rng):
        bundle = random_bundle(rng, input_size=8)
        blob = encode_bin(bundle, sentinel_begin="--B--", sentinel_end="--E--")
        assert blob.startswith(b"--B--\n")
        back = decode_bin(blob, sentinel_begin="--B--", sentinel_end="--E--")
        np.testing.assert_array_equal(back.conv1, bundle.conv1)
        with pytest.raises(MalformedHeader):
            decode_bin(blob)  # default sentinels must not match

    def test_missing_begin_sentinel(self, rng):
        blob = encode_bin(random_bundle(rng, input_size=8))
        with pytest.raises(MalformedHeader):
            decode_bin(b"JUNK" + blob)

    def test_corrupt_json(self, rng):
        blob = encode_bin(random_bundle(rng, input_size=8))
        head, _, rest = blob.partition(b"\n")
        _, _, rest = rest.partition(b"\n")
        with pytest.raises(MalformedHeader):
            decode_bin(head + b"\n{not json]\n" + rest)

    def test_missing_end_sentinel(self):
        with pytest.raises(MalformedHeader):
            decode_bin(codec.SENTINEL_BEGIN.encode() + b"\n{}\nWRONG\n" + b"\x00" * 64)

    def test_label_count_mismatch_in_header(self):
        meta = {"version": 1, "inputSize": 8, "numClasses": 3, "classLabels": ["a", "b"],
                "grayscale": False, "f1": 4, "f2": 8, "conv2Out": 1}
        blob = (codec.SENTINEL_BEGIN.encode() + b"\n" + json.dumps(meta).encode() + b"\n"
                + codec.SENTINEL_END.encode() + b"\n")
        with pytest.raises(MalformedHeader):
            decode_bin(blob)

    def test_truncated_payload(self, rng):
        blob = encode_bin(random_bundle(rng, input_size=8))
        with pytest.raises(TruncatedWeights):
            decode_bin(blob[:-1])
        with pytest.raises(TruncatedWeights):
            decode_bin(blob[:len(blob) // 2])

    def test_trailing_garbage_rejected(self, rng):
        blob = encode_bin(random_bundle(rng, input_size=8))
        with pytest.raises(TruncatedWeights):
            decode_bin(blob + b"\x00\x00\x00\x00")

    def test_payload_is_little_endian_in_declared_order(self, rng):
        bundle = random_bundle(rng, input_size=8)
        blob = encode_bin(bundle)
        payload = blob.split(b"\n", 3)[3]
        first = np.frombuffer(payload[:4 * bundle.conv1.size], dtype="<f4")
        np.testing.assert_array_equal(first.reshape(bundle.conv1.shape), bundle.conv1)


# ----------------------------------------------------------------------
# myWeights.h
# ----------------------------------------------------------------------

class TestCHeader:
    def test_contains_bake_instructions(self, rng):
        text = emit_c_header(random_bundle(rng, input_size=8))
        assert "USE_BAKED_WEIGHTS" in text
        assert "const float conv1_weights[" in text
        assert "const float dense_bias[" in text

    def test_text_round_trip_is_exact_for_float32(self, rng):
        bundle = random_bundle(rng, input_size=12)
        arrays = codec.parse_c_header_arrays(emit_c_header(bundle))
        assert set(arrays) == {"conv1_weights", "conv1_bias", "conv2_weights",
                               "conv2_bias", "dense_weights", "dense_bias"}
        for (name, orig), cname in zip(bundle.arrays(), arrays):
            parsed = arrays[codec._C_ARRAY_NAMES[name]].astype(np.float32)
            np.testing.assert_array_equal(parsed, orig.ravel())

    def test_round_trip_relative_error(self, rng):
        # the formal tolerance: every value back within 1e-6 relative
        bundle = random_bundle(rng, input_size=8)
        arrays = codec.parse_c_header_arrays(emit_c_header(bundle))
        for name, orig in bundle.arrays():
            parsed = arrays[codec._C_ARRAY_NAMES[name]]
            denom = np.maximum(np.abs(orig.ravel()), 1e-20)
            assert np.max(np.abs(parsed - orig.ravel()) / denom) < 1e-6

    def test_values_in_device_order(self, rng):
        bundle = random_bundle(rng, input_size=8)
        arrays = codec.parse_c_header_arrays(emit_c_header(bundle))
        np.testing.assert_array_equal(arrays["conv2_weights"].astype(np.float32),
                                      bundle.conv2.ravel())


# ----------------------------------------------------------------------
# config.json
# ----------------------------------------------------------------------

class TestConfig:
    def test_reference_document_exact_values(self):
        cfg = parse_config(REFERENCE_CONFIG_TEXT)
        assert cfg.version == 68
        assert cfg.input_size == 64
        assert cfg.num_classes == 3
        assert cfg.class_labels == ["0Blank", "1Cup", "2Pen"]
        assert cfg.learning_rate == 0.0003
        assert cfg.batch_size == 6
        assert cfg.target_epochs == 20
        assert cfg.use_augmentation is True
        assert cfg.use_grayscale is False
        assert cfg.images_to_psram is True
        assert cfg.validation_images == 3
        assert cfg.weights_file == "myWeights.bin"
        assert cfg.extra == {}

    def test_emit_parse_identity(self):
        cfg = parse_config(REFERENCE_CONFIG_TEXT)
        again = parse_config(emit_config(cfg))
        assert again == cfg

    def test_unknown_fields_preserved(self):
        doc = json.loads(REFERENCE_CONFIG_TEXT)
        doc["futureKnob"] = {"nested": [1, 2, 3]}
        doc["otherFlag"] = False
        cfg = parse_config(json.dumps(doc))
        assert cfg.extra == {"futureKnob": {"nested": [1, 2, 3]}, "otherFlag": False}
        emitted = json.loads(emit_config(cfg))
        assert emitted["futureKnob"] == {"nested": [1, 2, 3]}
        assert emitted["otherFlag"] is False
        assert parse_config(emit_config(cfg)) == cfg

    @pytest.mark.parametrize("missing", [name for name, _ in codec.CONFIG_FIELDS])
    def test_each_missing_field_is_named(self, missing):
        doc = json.loads(REFERENCE_CONFIG_TEXT)
        del doc[missing]
        with pytest.raises(ConfigInvalid) as exc:
            parse_config(json.dumps(doc))
        assert exc.value.field == missing

    @pytest.mark.parametrize("field,value", [
        ("learningRate", 0), ("learningRate", -0.1),
        ("batchSize", 0), ("validationImages", -1),
        ("numClasses", 4), ("classLabels", [1, 2, 3]),
    ])
    def test_bad_values_rejected(self, field, value):
        doc = json.loads(REFERENCE_CONFIG_TEXT)
        doc[field] = value
        with pytest.raises(ConfigInvalid):
            parse_config(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(ConfigInvalid):
            parse_config("not json at all {")

    def test_spec_derived_from_config(self):
        cfg = parse_config(REFERENCE_CONFIG_TEXT)
        spec = cfg.to_spec()
        assert spec == ModelSpec(input_size=64, channels=3, num_classes=3)
        gray = parse_config(REFERENCE_CONFIG_TEXT.replace('"useGrayscale": false',
                                                          '"useGrayscale": true'))
        assert gray.to_spec().channels == 1


# ----------------------------------------------------------------------
# bundle <-> engine weights
# ----------------------------------------------------------------------

class TestBundleBridge:
    def test_weights_survive_bundle_round_trip(self, rng):
        meta = ref_meta()
        weights = build_model(meta.to_spec(), seed=13)
        back = codec.bundle_to_weights(codec.weights_to_bundle(weights, meta))
        for name in model.ModelWeights.FIELDS:
            np.testing.assert_array_equal(getattr(back, name), getattr(weights, name))

    def test_full_file_round_trip_preserves_forward(self, rng):
        meta = HeaderMeta(version=2, input_size=16, num_classes=3,
                          class_labels=["a", "b", "c"], grayscale=False)
        weights = build_model(meta.to_spec(), seed=3)
        blob = encode_bin(codec.weights_to_bundle(weights, meta))
        restored = codec.bundle_to_weights(decode_bin(blob))
        img = rng.random((16, 16, 3), dtype=np.float32)
        p1, _ = model.forward(weights, img)
        p2, _ = model.forward(restored, img)
        np.testing.assert_array_equal(p1, p2)

    def test_meta_mismatch_rejected(self, rng):
        meta = ref_meta()
        weights = build_model(ModelSpec(input_size=16), seed=0)
        with pytest.raises(ValueError):
            codec.weights_to_bundle(weights, meta)
