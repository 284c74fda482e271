"""Small synthetic scenes used by the demos, the tests and the CLI smoke runs."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .arrays import SectorArray, SystemConfig
from .scene import Building, Material, Scene, with_materials

CONCRETE = Material("concrete", 5.31, 0.139)
BRICK = Material("brick", 3.0, 0.01)
GROUND = Material("ground", 3.0, 0.005)


def box(x0: float, x1: float, y0: float, y1: float) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def open_scene(half: float = 600.0) -> Scene:
    """No buildings; a ground plane only."""
    return Scene([], {"ground": GROUND}, ((-half, -half), (half, half)), "ground")


def single_box() -> Scene:
    return Scene([Building("b0", box(0, 10, 0, 10), 10.0, "concrete")],
                 {"concrete": CONCRETE, "ground": GROUND}, ((-50, -50), (60, 60)), "ground")


def single_wall(material: Material = CONCRETE, length: float = 200.0, height: float = 40.0) -> Scene:
    """A thin slab whose +x face lies on the plane x = 0."""
    b = Building("wall", box(-2.0, 0.0, -length / 2, length / 2), height, material.id)
    return Scene([b], {material.id: material, "ground": GROUND}, ((-110, -110), (110, 110)), "ground")


def canyon() -> Scene:
    """Four 80 m blocks around a 20 m street cross in a 200 m square."""
    blocks = [((-90, -10, -90, -10), 20.0), ((10, 90, -90, -10), 30.0), ((10, 90, 10, 90), 25.0),
              ((-90, -10, 10, 90), 15.0)]
    b = [Building(f"b{i}", box(*fp), h, "concrete") for i, (fp, h) in enumerate(blocks)]
    return Scene(b, {"concrete": CONCRETE, "ground": GROUND}, ((-100, -100), (100, 100)), "ground")


def blocked_courtyard() -> tuple[Scene, list[SectorArray]]:
    """A courtyard shadowed from the only base station by the south and east blocks.

    The north block's south facade is visible from the base station and from
    the courtyard, so it can host a surface.  Walls are weak reflectors, so
    the multi-bounce paths that reach the courtyard stay below -100 dBm.
    """
    buildings = [
        Building("south", box(-60, 20, -20, 0), 30.0, "brick"),
        Building("east", box(20, 50, -20, 35), 30.0, "brick"),
        Building("west", box(-60, -20, 0, 60), 30.0, "brick"),
        Building("north", box(-60, 100, 60, 80), 25.0, "brick"),
    ]
    scene = Scene(buildings, {"brick": BRICK, "ground": GROUND}, ((-60, -100), (100, 80)), "ground")
    return scene, [courtyard_bs()]


def courtyard_bs(m_h: int = 2, m_v: int = 2) -> SectorArray:
    return SectorArray(np.array([90.0, -80.0, 10.0]), 90.0, 0.0, m_h, m_v)


def courtyard_network(system: SystemConfig) -> list[SectorArray]:
    return [courtyard_bs(system.m_h, system.m_v)]


def calibration_town(materials: dict[str, Material] | None = None) -> Scene:
    """2x2 blocks of two building groups each, with a geographic origin.

    Groups: ``west`` (blocks A, C) and ``east`` (blocks B, D).
    """
    mats = {"concrete": CONCRETE, "ground": GROUND}
    if materials:
        mats.update(materials)
    spec = [("A", box(20, 90, 20, 90), 20.0, "west"), ("B", box(110, 180, 20, 90), 25.0, "east"),
            ("C", box(20, 90, 110, 180), 18.0, "west"), ("D", box(110, 180, 110, 180), 22.0, "east")]
    b = [Building(i, fp, h, "concrete", g) for i, fp, h, g in spec]
    return Scene(b, mats, ((0, 0), (200, 200)), "ground", geo_origin=(51.5, -0.1))


def calibration_network(system: SystemConfig) -> list[SectorArray]:
    return [SectorArray(np.array([100.0, 5.0, 12.0]), 90.0, 0.0, system.m_h, system.m_v)]


CAL_TRUTH = {"t_west": Material("t_west", 2.5, 0.01, 0.05), "t_east": Material("t_east", 3.5, 0.02, 0.1)}
CAL_REGIONS = [(6, 10), (7, 9), (7, 10), (8, 9), (11, 9), (12, 9), (12, 10), (13, 10), (5, 10)]
CAL_BAD_REGION = (5, 10)


def calibration_truth() -> Scene:
    """The calibration town with the hidden ground-truth materials assigned."""
    return with_materials(calibration_town(), CAL_TRUTH, {"A": "t_west", "C": "t_west", "B": "t_east", "D": "t_east"})


def calibration_measurements(system: SystemConfig, cfg, noise_db: float = 2.0, seed: int = 1,
                             bad_offset_db: float = -30.0):
    """Noisy drive-test samples from the truth scene; one region carries a gross offset."""
    from .calibration import synthetic_measurements

    samples = synthetic_measurements(calibration_truth(), calibration_network(system), system, cfg, CAL_REGIONS,
                                     noise_db=noise_db, seed=seed)
    bad = lambda s: (int(s.x // 10), int(s.y // 10)) == CAL_BAD_REGION  # noqa: E731
    return [replace(s, rsrp_dbm=s.rsrp_dbm + bad_offset_db) if bad(s) else s for s in samples]
