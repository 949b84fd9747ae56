"""
Field runner: environment samples, snapshots and their second-moment checks.
"""

from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from ..schemas.field import FieldSample, GibbsSpec
from ..schemas.run import RunConfig, RunRecord
from ..tools.field_sampler import gibbs_chain, sample_continuum_field, sample_gff_lattice
from ..tools.spectral import continuum_box_variance
from ..tools.stats import covariance_zscores, replica_mean
from ..utils.errors import ConfigError
from ..utils.persistence import export_slice_csv, write_field_snapshot
from ..utils.seeding import seed_to_int, stream_id
from .base import ReplicaRunner, guarded

# Gibbs windows are compared against FFT draws on seeds shifted by this offset.
REFERENCE_OFFSET = 1_000_003
WINDOW = 3


def draw_field(config: RunConfig, replica: int) -> Tuple[FieldSample, Dict[str, float]]:
    """One environment sample of the configured kind, with sampler diagnostics."""
    g = config.geometry
    seed = seed_to_int(config.seed, replica)
    kind = config.field.kind
    if kind == "lattice_gaussian":
        return sample_gff_lattice(g.d, g.L, seed, stiffness=config.stiffness), {}
    if kind == "lattice_gibbs":
        if config.rate is None:
            raise ConfigError("gibbs sampling needs a rate function")
        spec = GibbsSpec(
            rate=config.rate,
            stiffness=config.stiffness,
            proposal_scale=config.field.proposal_scale,
            n_sweeps=config.field.sweeps,
            burn_in=config.field.burn_in,
        )
        return gibbs_chain(g.d, g.L, spec, seed)
    if config.potential is None:
        raise ConfigError("continuum fields need a potential")
    return sample_continuum_field(g.d, g.box, g.grid, config.potential, seed), {}


class FieldRunner(ReplicaRunner):
    """Draws independent environment samples and writes them as snapshots."""

    name = "field"

    @staticmethod
    def simulate(config: RunConfig, replica: int) -> Tuple[int, FieldSample, Dict[str, float], Dict[str, Any]]:
        sample, diagnostics = draw_field(config, replica)
        return replica, sample, diagnostics, config.model_dump(mode="json")

    async def fan_out(self, config: RunConfig) -> List[Any]:
        self._config = config
        self._payloads = await super().fan_out(config)
        return self._payloads

    def to_record(self, payload: Tuple[int, FieldSample, Dict[str, float], Dict[str, Any]]) -> RunRecord:
        replica, sample, diagnostics, config = payload
        entropy, spawn_key = stream_id(config["seed"], replica)
        return RunRecord(
            model="field",
            replica=replica,
            master_seed=entropy,
            spawn_key=list(spawn_key),
            config=config,
            horizon=0.0,
            stationary=True,
            extras={
                "seed": sample.seed,
                "kind": sample.kind,
                "neighbour_variance": [float(np.mean(sample.differences(l) ** 2)) for l in range(sample.d)],
                "variance": float(np.mean(sample.values ** 2)),
                **diagnostics,
            },
        )

    def persist_extra(self, run_dir: Path, replica: int, payload: Any) -> None:
        sample = payload[1]
        path = run_dir / "fields" / f"replica_{replica:04d}.fld"
        extra = {"stiffness": sample.stiffness, "box": sample.box}
        self.artifacts.append(write_field_snapshot(path, sample.values, sample.d, sample.L, sample.kind, sample.seed, extra))
        self.artifacts.append(Path(str(path) + ".json"))
        if self._config.field.export_slice and sample.d >= 2:
            self.artifacts.append(export_slice_csv(run_dir / "fields" / f"replica_{replica:04d}_slice.csv", sample.values))

    def summarize(self, config: RunConfig, records: List[RunRecord]) -> Dict[str, Any]:
        g = config.geometry
        kind = config.field.kind
        summary: Dict[str, Any] = {"model": "field", "kind": kind, "replicas": len(records)}

        if kind.startswith("lattice"):
            nn = [r.extras["neighbour_variance"][0] for r in records]
            summary["neighbour_variance"] = replica_mean(nn, "spatial_mean").model_dump()
            summary["neighbour_variance_exact"] = (1.0 - g.L ** (-g.d)) / (g.d * config.stiffness)
        else:
            pointwise = [r.extras["variance"] for r in records]
            summary["variance"] = replica_mean(pointwise, "spatial_mean").model_dump()
            guarded(summary, "variance_exact", lambda: continuum_box_variance(config.potential, g.box, g.grid))

        if kind == "lattice_gibbs":
            taus = [r.extras["tau_int"] for r in records]
            summary["tau_int"] = replica_mean(taus, "tau_int").model_dump()
            if len(records) > 1:
                guarded(summary, "window_covariance", lambda: self._window_comparison(config))
        return summary

    def _window_comparison(self, config: RunConfig) -> Dict[str, Any]:
        """Gibbs window differences against FFT draws of the same stiffness."""
        g = config.geometry
        gibbs = []
        ref = []
        for i, sample, _, _ in self._payloads:
            gibbs.append(sample.window_differences(WINDOW))
            fft = sample_gff_lattice(g.d, g.L, seed_to_int(config.seed, REFERENCE_OFFSET + i), config.stiffness)
            ref.append(fft.window_differences(WINDOW))
        result = covariance_zscores(np.asarray(gibbs), np.asarray(ref))
        return {"max_abs_z": result["max_abs_z"], "threshold": result["threshold"], "passed": result["passed"]}
