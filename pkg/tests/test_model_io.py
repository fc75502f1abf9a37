import numpy as np
import pytest

from splatspa.errors import (
    CorruptCheckpointError,
    InvalidBudgetError,
    PlyError,
    PlySchemaError,
    UnsupportedImageError,
    VersionMismatchError,
)
from splatspa.gs_core import sigmoid
from splatspa.model_io import (
    CHECKPOINT_VERSION,
    SPLAT_PLY_PROPERTIES,
    SplatPlyRecord,
    load_checkpoint,
    read_image,
    read_splat_ply,
    save_checkpoint,
    simplify_splat_ply,
    splat_ply_dtype,
    write_image,
    write_splat_ply,
)
from splatspa.targets import synthetic_image
from splatspa.trainer import SparsifyConfig, TrainerSession, init_cloud, make_schedule


def random_record(rng, n, extra=()):
    dt = splat_ply_dtype(extra=extra)
    vertices = np.zeros(n, dtype=dt)
    for name in dt.names:
        vertices[name] = rng.normal(size=n).astype(dt.fields[name][0])
    return SplatPlyRecord(vertices)


@pytest.fixture(scope="module")
def session_model():
    gt = synthetic_image(24, 24, seed=3)
    schedule = make_schedule(24, 24, total_iters=30, sparsify_start_iter=5,
                             prune_iter=25, rng_seed=1, eval_every=10)
    session = TrainerSession(init_cloud(gt, 20, seed=1), gt, schedule,
                             sparsify=SparsifyConfig(kappa=6, interval=5))
    session.run()
    return session.checkpoint()


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, session_model, tmp_path):
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(session_model, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_fields_match(self, session_model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(session_model, path)
        loaded = load_checkpoint(path)
        assert loaded.iteration == session_model.iteration
        assert loaded.mode == session_model.mode
        np.testing.assert_array_equal(loaded.cloud.mu, session_model.cloud.mu)
        np.testing.assert_array_equal(loaded.optimizer.m["color"],
                                      session_model.optimizer.m["color"])
        assert loaded.optimizer.step_count == session_model.optimizer.step_count
        np.testing.assert_array_equal(loaded.sparsifier.lam,
                                      session_model.sparsifier.lam)
        assert loaded.rng_state == session_model.rng_state

    def test_truncated_file_is_corrupt(self, session_model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(session_model, path)
        data = path.read_bytes()
        for cut in (4, 20, len(data) // 2, len(data) - 3):
            short = tmp_path / "short.ckpt"
            short.write_bytes(data[:cut])
            with pytest.raises(CorruptCheckpointError):
                load_checkpoint(short)

    def test_bad_magic_is_corrupt(self, session_model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(session_model, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_future_version_names_both_versions(self, session_model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(session_model, path)
        data = bytearray(path.read_bytes())
        data[8:12] = np.uint32(CHECKPOINT_VERSION + 41).tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError) as err:
            load_checkpoint(path)
        assert str(CHECKPOINT_VERSION + 41) in str(err.value)
        assert str(CHECKPOINT_VERSION) in str(err.value)


class TestSplatPly:
    def test_minimal_single_vertex(self, rng, tmp_path):
        record = random_record(rng, 1)
        path = tmp_path / "one.ply"
        write_splat_ply(record, path)
        loaded = read_splat_ply(path)
        assert loaded.n == 1
        np.testing.assert_array_equal(loaded.vertices, record.vertices)

    def test_payload_round_trips_byte_exactly(self, rng, tmp_path):
        record = random_record(rng, 37, extra=[("segment_id", "<u4")])
        p1 = tmp_path / "a.ply"
        p2 = tmp_path / "b.ply"
        write_splat_ply(record, p1)
        write_splat_ply(read_splat_ply(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_extra_properties_preserved_opaquely(self, rng, tmp_path):
        record = random_record(rng, 5, extra=[("confidence", "<f8")])
        path = tmp_path / "x.ply"
        write_splat_ply(record, path)
        loaded = read_splat_ply(path)
        assert "confidence" in loaded.property_names
        np.testing.assert_array_equal(loaded.vertices["confidence"],
                                      record.vertices["confidence"])

    def test_property_order_preserved(self, rng, tmp_path):
        record = random_record(rng, 3)
        path = tmp_path / "o.ply"
        write_splat_ply(record, path)
        assert read_splat_ply(path).property_names == list(SPLAT_PLY_PROPERTIES)

    def test_missing_property_names_it(self, rng, tmp_path):
        fields = [(n, "<f4") for n in SPLAT_PLY_PROPERTIES if n != "f_dc_1"]
        vertices = np.zeros(2, dtype=np.dtype(fields))
        path = tmp_path / "bad.ply"
        write_splat_ply(SplatPlyRecord(vertices), path)
        with pytest.raises(PlySchemaError) as err:
            read_splat_ply(path)
        assert "f_dc_1" in str(err.value)
        assert err.value.missing == ["f_dc_1"]

    def test_truncated_payload(self, rng, tmp_path):
        record = random_record(rng, 10)
        path = tmp_path / "t.ply"
        write_splat_ply(record, path)
        data = path.read_bytes()
        path.write_bytes(data[:-17])
        with pytest.raises(PlyError):
            read_splat_ply(path)

    def test_ascii_ply_rejected(self, tmp_path):
        path = tmp_path / "a.ply"
        path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(PlyError):
            read_splat_ply(path)


class TestSimplify:
    def test_identity_at_full_budget(self, rng):
        record = random_record(rng, 12)
        out = simplify_splat_ply(record, 12)
        np.testing.assert_array_equal(out.vertices, record.vertices)

    def test_top_two_of_four(self, rng):
        record = random_record(rng, 4)
        from splatspa.gs_core import inverse_sigmoid
        record.vertices["opacity"] = np.array(
            inverse_sigmoid(np.array([0.9, 0.1, 0.5, 0.3])), dtype=np.float32)
        out = simplify_splat_ply(record, 2)
        np.testing.assert_array_equal(out.vertices, record.vertices[[0, 2]])

    def test_matches_sort_oracle(self, rng):
        record = random_record(rng, 100)
        out = simplify_splat_ply(record, 30)
        opac = sigmoid(record.vertices["opacity"].astype(np.float64))
        oracle = np.sort(np.argsort(-opac, kind="stable")[:30])
        np.testing.assert_array_equal(out.vertices, record.vertices[oracle])

    def test_budget_error(self, rng):
        with pytest.raises(InvalidBudgetError):
            simplify_splat_ply(random_record(rng, 4), 5)

    def test_external_scores(self, rng):
        record = random_record(rng, 6)
        scores = np.array([0.0, 9.0, 1.0, 8.0, 2.0, 7.0])
        out = simplify_splat_ply(record, 3, scores=scores)
        np.testing.assert_array_equal(out.vertices, record.vertices[[1, 3, 5]])

    def test_retained_rows_bit_identical(self, rng):
        record = random_record(rng, 50, extra=[("tag", "<u4")])
        out = simplify_splat_ply(record, 20)
        for row in out.vertices:
            match = record.vertices[record.vertices["tag"] == row["tag"]]
            assert match.shape[0] == 1
            assert match[0].tobytes() == row.tobytes()


class TestImages:
    def test_white_pixel(self, tmp_path):
        path = tmp_path / "w.png"
        write_image(np.ones((1, 1, 3)), path)
        np.testing.assert_array_equal(read_image(path), np.ones((1, 1, 3)))

    def test_quantization_fixed_point(self, rng, tmp_path):
        img = rng.integers(0, 256, (9, 7, 3)).astype(np.float64) / 255.0
        path = tmp_path / "q.png"
        write_image(img, path)
        np.testing.assert_array_equal(read_image(path), img)

    def test_mid_gray_value(self, tmp_path):
        path = tmp_path / "g.png"
        write_image(np.full((2, 2, 3), 128 / 255.0), path)
        assert read_image(path)[0, 0, 0] == pytest.approx(0.50196, abs=1e-5)

    def test_round_half_up(self, tmp_path):
        # 0.5/255 quantizes up to 1, just below stays at 0
        img = np.zeros((1, 2, 3))
        img[0, 0] = 0.5 / 255.0
        img[0, 1] = 0.499 / 255.0
        path = tmp_path / "r.png"
        write_image(img, path)
        back = read_image(path)
        assert back[0, 0, 0] == 1 / 255.0
        assert back[0, 1, 0] == 0.0

    def test_ppm_round_trip(self, rng, tmp_path):
        img = rng.integers(0, 256, (5, 6, 3)).astype(np.float64) / 255.0
        path = tmp_path / "p.ppm"
        write_image(img, path)
        np.testing.assert_array_equal(read_image(path), img)

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(UnsupportedImageError):
            write_image(np.zeros((2, 2, 3)), tmp_path / "x.tiff")

    def test_grayscale_png_promoted_to_rgb(self, tmp_path):
        from PIL import Image
        path = tmp_path / "gray.png"
        Image.fromarray(np.full((3, 3), 77, dtype=np.uint8), mode="L").save(path)
        img = read_image(path)
        assert img.shape == (3, 3, 3)
        np.testing.assert_allclose(img, 77 / 255.0)
