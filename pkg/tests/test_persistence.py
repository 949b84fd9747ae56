"""Tests for artifact writing and manifests."""

import numpy as np
import pytest

from src.utils.errors import ConfigError
from src.utils.persistence import (
    dumps_json,
    export_slice_csv,
    is_complete,
    read_field_snapshot,
    read_json,
    read_series_csv,
    write_field_snapshot,
    write_json,
    write_manifest,
    write_series_csv,
)


class TestJson:
    """Canonical JSON."""

    def test_sorted_keys_and_numpy(self):
        """Keys are sorted and numpy values serialize."""
        text = dumps_json({"b": np.float64(1.5), "a": np.arange(2)})
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith("\n")
        assert '"b": 1.5' in text


class TestSeries:
    """Trajectory CSVs."""

    def test_exact_values(self, tmp_path):
        """repr formatting keeps every bit."""
        times = [0.0, 0.1, 0.30000000000000004]
        positions = np.array([[0.0, 1.0], [1.0 / 3.0, -2.0], [np.pi, 1e-17]])
        t, x = read_series_csv(write_series_csv(tmp_path / "s.csv", times, positions))
        np.testing.assert_array_equal(t, times)
        np.testing.assert_array_equal(x, positions)

    def test_shape_mismatch(self, tmp_path):
        """Positions must match the time grid."""
        with pytest.raises(ConfigError):
            write_series_csv(tmp_path / "s.csv", [0.0, 1.0], np.zeros((3, 2)))


class TestFieldSnapshot:
    """Binary field snapshots with JSON sidecars."""

    def test_snapshot_and_sidecar(self, tmp_path):
        """Header, values and sidecar agree."""
        values = np.random.default_rng(0).normal(size=(4, 4, 4))
        path = write_field_snapshot(tmp_path / "f.fld", values, 3, 4, "lattice_gibbs", 123, {"stiffness": 1.0})
        data = read_field_snapshot(path)
        assert data["kind"] == "lattice_gibbs" and data["seed"] == 123
        np.testing.assert_array_equal(data["values"], values)
        assert read_json(tmp_path / "f.fld.json")["stiffness"] == 1.0

    def test_unknown_kind(self, tmp_path):
        """Only the known field kinds are written."""
        with pytest.raises(ConfigError):
            write_field_snapshot(tmp_path / "f.fld", np.zeros(4), 1, 4, "mystery", 0)

    def test_not_a_snapshot(self, tmp_path):
        """Foreign files are rejected."""
        path = tmp_path / "junk.fld"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(ConfigError):
            read_field_snapshot(path)

    def test_slice_export(self, tmp_path):
        """A 3d field exports an L x L grid."""
        path = export_slice_csv(tmp_path / "slice.csv", np.zeros((4, 4, 4)))
        assert len(path.read_text().splitlines()) == 4


class TestManifest:
    """Completion markers."""

    def test_complete_run(self, tmp_path):
        """A manifest over intact artifacts marks the run complete."""
        artifact = write_json(tmp_path / "summary.json", {"x": 1})
        write_manifest(tmp_path, [artifact], {"model": "spectral"}, 7)
        manifest = read_json(tmp_path / "manifest.json")
        assert manifest["artifacts"][0]["path"] == "summary.json"
        assert manifest["master_seed"] == 7
        assert is_complete(tmp_path)

    def test_missing_manifest(self, tmp_path):
        """No manifest, no completion."""
        write_json(tmp_path / "summary.json", {"x": 1})
        assert not is_complete(tmp_path)

    def test_deleted_artifact(self, tmp_path):
        """A missing artifact invalidates the run."""
        artifact = write_json(tmp_path / "summary.json", {"x": 1})
        write_manifest(tmp_path, [artifact], {}, 0)
        artifact.unlink()
        assert not is_complete(tmp_path)
