import numpy as np
import pytest
from hypothesis import settings

from risplan.arrays import get_system
from risplan.coverage import CoverageEngine
from risplan.placement import Planner, PipelineConfig
from risplan.raytrace import TraceConfig
from risplan.scene import TileGrid
from risplan.synthetic import blocked_courtyard

settings.register_profile("risplan", max_examples=40, deadline=None)
settings.load_profile("risplan")


@pytest.fixture(scope="session")
def courtyard_run():
    """Coverage map and full pipeline result on the blocked courtyard (4G, 1e5 rays)."""
    scene, network = blocked_courtyard()
    system = get_system("4G")
    eng = CoverageEngine(scene, network, system, TraceConfig(ray_count=100_000))
    grid = TileGrid.covering(scene.bounds)
    cmap = eng.coverage_map(grid)
    planner = Planner(eng, cmap, PipelineConfig())
    result = planner.run()
    return {"scene": scene, "network": network, "system": system, "engine": eng, "grid": grid, "cmap": cmap,
            "planner": planner, "result": result}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
