"""Write scene, network and config files for the CLI into a directory (default: ./courtyard_run)."""
import json
import sys
from pathlib import Path

from risplan.arrays import network_to_dict
from risplan.scene import save_scene
from risplan.synthetic import blocked_courtyard

CONFIG = """[scene]
path = scene.json

[network]
path = net.json
system = 4G

[trace]
ray_count = 100000

[grid]
tile_size = 2.0

[pipeline]
t1 = 15
t2 = 10

[output]
dir = out
"""


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "courtyard_run")
    out.mkdir(parents=True, exist_ok=True)
    scene, net = blocked_courtyard()
    save_scene(scene, out / "scene.json")
    (out / "net.json").write_text(json.dumps(network_to_dict(net), indent=2))
    (out / "run.cfg").write_text(CONFIG)
    print(f"wrote {out}/run.cfg; try: risplan place --config {out}/run.cfg")


if __name__ == "__main__":
    main()
