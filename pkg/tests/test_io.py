"""File formats: cloud text files, XYZ, JSONL datasets."""

import numpy as np
import pytest

from permdiff.errors import ParseError
from permdiff.io import (
    read_cloud,
    read_cloud_text,
    read_dataset,
    read_xyz,
    write_cloud_text,
    write_dataset,
)


class TestCloudText:
    def test_roundtrip(self, tmp_path):
        pts = np.random.default_rng(0).standard_normal((4, 3))
        path = tmp_path / "cloud.txt"
        write_cloud_text(path, pts)
        back = read_cloud_text(path)
        np.testing.assert_array_equal(back.points, pts)

    def test_header_format(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("2 1\n0.5\n-1.5\n")
        cloud = read_cloud_text(path)
        assert cloud.n == 2 and cloud.d == 1
        np.testing.assert_array_equal(cloud.points, [[0.5], [-1.5]])

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# cloud\n2 1\n\n1.0\n2.0\n")
        assert read_cloud_text(path).n == 2

    @pytest.mark.parametrize(
        "content",
        [
            "",
            "2\n0.0\n1.0\n",
            "3 1\n0.0\n1.0\n",
            "2 1\n0.0 5.0\n1.0\n",
            "2 1\nzero\none\n",
        ],
    )
    def test_bad_files_raise_parse_error(self, tmp_path, content):
        path = tmp_path / "bad.txt"
        path.write_text(content)
        with pytest.raises(ParseError):
            read_cloud_text(path)

    def test_missing_file_raises_file_not_found(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_cloud_text(tmp_path / "nope.txt")


class TestXyz:
    def test_one_hot_features(self, tmp_path):
        path = tmp_path / "mol.xyz"
        path.write_text("2\nwater-ish\nO 0.0 0.0 0.1\nH 1.0 0.0 0.0\n")
        cloud = read_xyz(path, ["H", "O"])
        assert cloud.d == 5
        np.testing.assert_array_equal(cloud.points[0], [0.0, 0.0, 0.1, 0.0, 1.0])
        np.testing.assert_array_equal(cloud.points[1], [1.0, 0.0, 0.0, 1.0, 0.0])

    def test_unknown_element(self, tmp_path):
        path = tmp_path / "mol.xyz"
        path.write_text("1\nx\nXe 0 0 0\n")
        with pytest.raises(ParseError, match="element"):
            read_xyz(path, ["H"])

    def test_requires_element_table(self, tmp_path):
        path = tmp_path / "mol.xyz"
        path.write_text("1\nx\nH 0 0 0\n")
        with pytest.raises(ParseError):
            read_xyz(path, [])

    def test_dispatch_on_extension(self, tmp_path):
        path = tmp_path / "mol.xyz"
        path.write_text("1\nx\nH 0 0 0\n")
        cloud = read_cloud(path, ["H"])
        assert cloud.d == 4


class TestDataset:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        clouds = [rng.standard_normal((3, 2)) for _ in range(5)]
        path = tmp_path / "data.jsonl"
        write_dataset(path, clouds)
        back = read_dataset(path)
        assert len(back) == 5
        for orig, loaded in zip(clouds, back):
            np.testing.assert_array_equal(loaded.points, orig)

    def test_bad_record(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"points": [[0.0]]}\nnot json\n')
        with pytest.raises(ParseError, match=":2"):
            read_dataset(path)

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text("\n")
        with pytest.raises(ParseError):
            read_dataset(path)
