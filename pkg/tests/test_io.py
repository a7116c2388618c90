"""MOT files, embedding sidecars, affine sidecars, and config files."""

import struct

import numpy as np
import pytest

from drone_assoc.core import BoundingBox
from drone_assoc.mot_io import (
    FormatError,
    MotLine,
    RunConfig,
    load_run_config,
    parse_affines,
    parse_detections,
    parse_embeddings,
    parse_mot_lines,
    read_key_values,
    run_config_from_dict,
    save_run_config,
    write_affines,
    write_embeddings,
    write_mot_file,
    write_results,
)
from drone_assoc.motion import AffineTransform


def mot(frame, obj_id, x, y, w=10.0, h=10.0, score=0.9, class_id=1, vis=1.0):
    return MotLine(frame, obj_id, BoundingBox(x, y, w, h), score, class_id, vis)


class TestMotFiles:
    def test_write_parse_round_trip(self, tmp_path):
        path = str(tmp_path / "gt.txt")
        lines = [mot(2, 7, 1.5, 2.25, 10.0, 20.0, 0.875),
                 mot(1, 3, 0.1, 0.2, 5.5, 6.5, 1.0, class_id=2, vis=0.5)]
        write_mot_file(path, lines, comment="round trip check")
        parsed, stats = parse_mot_lines(path)
        assert stats.lines == 2 and stats.malformed == 0
        assert parsed == sorted(lines, key=lambda ln: (ln.frame, ln.obj_id))

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text("# header\n\n1,1,0,0,10,10,0.9,1,1.0\n   \n")
        parsed, stats = parse_mot_lines(str(path))
        assert len(parsed) == 1 and stats.lines == 1

    def test_short_row_is_malformed(self, tmp_path):
        path = tmp_path / "det.txt"
        rows = ["1,1,0,0,10,10,0.9,1,1.0"] * 9 + ["1,2,3"]
        path.write_text("\n".join(rows) + "\n")
        parsed, stats = parse_mot_lines(str(path))
        assert len(parsed) == 9 and stats.malformed == 1

    def test_non_numeric_row_is_malformed(self, tmp_path):
        path = tmp_path / "det.txt"
        rows = ["1,1,0,0,10,10,0.9,1,1.0"] * 9 + ["1,1,zero,0,10,10,0.9,1,1.0"]
        path.write_text("\n".join(rows) + "\n")
        _, stats = parse_mot_lines(str(path))
        assert stats.malformed == 1

    def test_zero_based_frame_is_malformed(self, tmp_path):
        path = tmp_path / "det.txt"
        rows = ["1,1,0,0,10,10,0.9,1,1.0"] * 9 + ["0,1,0,0,10,10,0.9,1,1.0"]
        path.write_text("\n".join(rows) + "\n")
        parsed, stats = parse_mot_lines(str(path))
        assert len(parsed) == 9 and stats.malformed == 1

    def test_too_many_malformed_rows_fatal(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text("1,1,0,0,10,10,0.9,1,1.0\nbroken,row\n")
        with pytest.raises(FormatError):
            parse_mot_lines(str(path))

    def test_empty_box_skipped_with_stat(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text("1,1,0,0,0,10,0.9,1,1.0\n1,2,0,0,10,10,0.9,1,1.0\n")
        parsed, stats = parse_mot_lines(str(path))
        assert len(parsed) == 1
        assert stats.skipped_empty_box == 1
        assert stats.malformed == 0  # lenient skip, not an error

    def test_out_of_range_score_clamped(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text("1,1,0,0,10,10,1.7,1,1.0\n1,2,0,0,10,10,-0.2,1,1.0\n")
        parsed, stats = parse_mot_lines(str(path))
        assert [ln.score for ln in parsed] == [1.0, 0.0]
        assert stats.clamped_scores == 2

    def test_missing_visibility_defaults_to_one(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text("1,1,0,0,10,10,0.9,1\n")
        parsed, _ = parse_mot_lines(str(path))
        assert parsed[0].visibility == 1.0

    def test_unreadable_file_raises(self, tmp_path):
        with pytest.raises(FormatError):
            parse_mot_lines(str(tmp_path / "missing.txt"))


class TestParseDetections:
    def test_groups_by_frame_in_order(self, tmp_path):
        path = tmp_path / "det.txt"
        path.write_text(
            "2,1,0,0,10,10,0.9,1,1.0\n"
            "1,1,0,0,10,10,0.9,1,1.0\n"
            "1,2,20,0,10,10,0.8,1,1.0\n"
        )
        frames = parse_detections(str(path))
        assert [fd.frame for fd in frames] == [1, 2]
        assert len(frames[0].detections) == 2

    def test_embeddings_attach_by_frame_and_ordinal(self, tmp_path):
        det_path = tmp_path / "det.txt"
        det_path.write_text(
            "1,1,0,0,10,10,0.9,1,1.0\n"
            "1,2,20,0,10,10,0.8,1,1.0\n"
        )
        emb_path = str(tmp_path / "emb.bin")
        v0 = np.array([1.0, 0.0], dtype=np.float64)
        v1 = np.array([0.0, 1.0], dtype=np.float64)
        write_embeddings(emb_path, [(1, 0, v0), (1, 1, v1)], 2)
        frames = parse_detections(str(det_path), emb_path, 2)
        dets = frames[0].detections
        assert np.allclose(dets[0].embedding, v0)
        assert np.allclose(dets[1].embedding, v1)

    def test_min_score_drop_preserves_ordinals(self, tmp_path):
        """A filtered row still consumes its ordinal in the sidecar."""
        det_path = tmp_path / "det.txt"
        det_path.write_text(
            "1,1,0,0,10,10,0.05,1,1.0\n"
            "1,2,20,0,10,10,0.9,1,1.0\n"
        )
        emb_path = str(tmp_path / "emb.bin")
        v0 = np.array([1.0, 0.0], dtype=np.float64)
        v1 = np.array([0.0, 1.0], dtype=np.float64)
        write_embeddings(emb_path, [(1, 0, v0), (1, 1, v1)], 2)
        frames = parse_detections(str(det_path), emb_path, 2, min_score=0.1)
        dets = frames[0].detections
        assert len(dets) == 1
        assert np.allclose(dets[0].embedding, v1)

    def test_missing_embedding_is_fatal(self, tmp_path):
        det_path = tmp_path / "det.txt"
        det_path.write_text("1,1,0,0,10,10,0.9,1,1.0\n1,2,20,0,10,10,0.9,1,1.0\n")
        emb_path = str(tmp_path / "emb.bin")
        write_embeddings(emb_path, [(1, 0, np.array([1.0, 0.0]))], 2)
        with pytest.raises(FormatError):
            parse_detections(str(det_path), emb_path, 2)


class TestEmbeddingSidecar:
    def test_binary_round_trip_normalizes(self, tmp_path, rng):
        path = str(tmp_path / "emb.bin")
        records = [(f, o, rng.normal(size=8) * 3.0)
                   for f in (1, 2) for o in (0, 1)]
        write_embeddings(path, records, 8)
        out = parse_embeddings(path, 8)
        assert set(out) == {(1, 0), (1, 1), (2, 0), (2, 1)}
        for frame, ordinal, vec in records:
            got = out[(frame, ordinal)]
            assert np.linalg.norm(got) == pytest.approx(1.0, abs=1e-9)
            # float32 storage: direction survives to ~1e-7
            expected = vec / np.linalg.norm(vec)
            assert np.allclose(got, expected, atol=1e-6)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "emb.bin"
        path.write_bytes(struct.pack("<4sIII", b"DEMB", 99, 2, 0))
        with pytest.raises(FormatError):
            parse_embeddings(str(path))

    def test_dim_mismatch_rejected(self, tmp_path):
        path = str(tmp_path / "emb.bin")
        write_embeddings(path, [(1, 0, np.ones(4))], 4)
        with pytest.raises(FormatError):
            parse_embeddings(path, expected_dim=8)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "emb.bin"
        good = struct.pack("<4sIII", b"DEMB", 1, 2, 2)
        good += struct.pack("<II", 1, 0) + np.ones(2, dtype="<f4").tobytes()
        path.write_bytes(good)  # header claims 2 records, holds 1
        with pytest.raises(FormatError):
            parse_embeddings(str(path))

    def test_duplicate_key_rejected(self, tmp_path):
        path = str(tmp_path / "emb.bin")
        write_embeddings(path, [(1, 0, np.ones(2)), (1, 0, np.ones(2))], 2)
        with pytest.raises(FormatError):
            parse_embeddings(path)

    def test_csv_fallback(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("# frame,ordinal,v0,v1\n1,0,3.0,4.0\n1,1,1.0,0.0\n")
        out = parse_embeddings(str(path))
        assert np.allclose(out[(1, 0)], [0.6, 0.8])
        assert np.allclose(out[(1, 1)], [1.0, 0.0])

    def test_csv_inconsistent_dim_rejected(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("1,0,1.0,0.0\n1,1,1.0,0.0,0.0\n")
        with pytest.raises(FormatError):
            parse_embeddings(str(path))

    def test_csv_duplicate_rejected(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("1,0,1.0,0.0\n1,0,0.0,1.0\n")
        with pytest.raises(FormatError):
            parse_embeddings(str(path))


class TestAffineSidecar:
    def test_absent_file_means_identity(self, tmp_path):
        assert parse_affines(str(tmp_path / "nope.csv")) == {}

    def test_round_trip_is_exact(self, tmp_path):
        path = str(tmp_path / "affines.csv")
        affines = {
            2: AffineTransform(np.array([[1.0, 0.0, 4.0], [0.0, 1.0, 1.0]])),
            3: AffineTransform(np.array([[0.99, -0.02, 0.1], [0.02, 0.99, -0.3]])),
        }
        write_affines(path, affines, comment="cam motion")
        out = parse_affines(path)
        assert set(out) == {2, 3}
        for frame, m in affines.items():
            assert np.array_equal(out[frame].m, m.m)

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "affines.csv"
        path.write_text("2,1.0,0.0,4.0\n")
        with pytest.raises(FormatError):
            parse_affines(str(path))

    def test_non_numeric_rejected(self, tmp_path):
        path = tmp_path / "affines.csv"
        path.write_text("2,one,0.0,4.0,0.0,1.0,1.0\n")
        with pytest.raises(FormatError):
            parse_affines(str(path))

    def test_singular_transform_fatal(self, tmp_path):
        path = tmp_path / "affines.csv"
        path.write_text("2,1.0,2.0,0.0,2.0,4.0,0.0\n")
        with pytest.raises(FormatError):
            parse_affines(str(path))


class TestWriteResults:
    def test_sorted_with_trailing_sentinels(self, tmp_path):
        from drone_assoc.association import TrackRecord

        path = tmp_path / "res.txt"
        records = [
            TrackRecord(2, 1, BoundingBox(0.5, 1.5, 10.0, 10.0), 0.9, 1),
            TrackRecord(1, 2, BoundingBox(5.0, 5.0, 8.0, 8.0), 0.8, 1),
            TrackRecord(1, 1, BoundingBox(0.0, 0.0, 10.0, 10.0), 0.7, 2),
        ]
        write_results(records, str(path))
        lines = path.read_text().splitlines()
        assert [ln.split(",")[:2] for ln in lines] == [
            ["1", "1"], ["1", "2"], ["2", "1"]]
        assert all(ln.endswith(",-1,-1") for ln in lines)

    def test_written_floats_parse_back_exactly(self, tmp_path):
        from drone_assoc.association import TrackRecord

        path = tmp_path / "res.txt"
        b = BoundingBox(1.0 / 3.0, 0.1, 10.7, 20.0000001)
        write_results([TrackRecord(1, 1, b, 0.123456789, 1)], str(path))
        parts = path.read_text().strip().split(",")
        assert [float(v) for v in parts[2:6]] == [b.x, b.y, b.w, b.h]
        assert float(parts[6]) == 0.123456789


class TestRunConfig:
    def test_defaults_match_tracker_config(self):
        from drone_assoc.core import TrackerConfig

        assert RunConfig().tracker_config() == TrackerConfig()

    def test_dict_coercions(self):
        cfg = run_config_from_dict({
            "detections": "det.txt",
            "affines": "none",
            "output": "",
            "embedding_dim": "32",
            "seed": "7",
            "w_a": "0.25",
            "use_afs": "false",
            "use_dmp": "1",
        })
        assert cfg.detections == "det.txt"
        assert cfg.affines is None and cfg.output is None
        assert cfg.embedding_dim == 32 and cfg.seed == 7
        assert cfg.w_a == 0.25
        assert cfg.use_afs is False and cfg.use_dmp is True

    def test_native_bool_passes_through(self):
        assert run_config_from_dict({"use_afs": False}).use_afs is False

    def test_unknown_key_rejected(self):
        with pytest.raises(FormatError):
            run_config_from_dict({"speed": "11"})

    def test_bad_bool_rejected(self):
        with pytest.raises(FormatError):
            run_config_from_dict({"use_afs": "maybe"})

    def test_bad_number_rejected(self):
        with pytest.raises(FormatError):
            run_config_from_dict({"w_a": "heavy"})

    def test_file_round_trip(self, tmp_path):
        path = str(tmp_path / "run.cfg")
        cfg = RunConfig(detections="d.txt", embeddings="e.bin", output="o.txt",
                        embedding_dim=32, seed=3, theta_high=0.7, use_dmp=False)
        save_run_config(cfg, path)
        assert load_run_config(path) == cfg

    def test_key_value_file_errors(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("theta_high 0.7\n")
        with pytest.raises(FormatError):
            read_key_values(str(path))
        with pytest.raises(FormatError):
            read_key_values(str(tmp_path / "absent.cfg"))
