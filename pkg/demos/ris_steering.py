"""Far-field pattern of a facade RIS before and after anomalous-reflection configuration."""
import numpy as np

from risplan.rismodel import configure_anomalous_phase, far_field_pattern, make_ris, specular_dir

F = 3.5e9


def main():
    u = make_ris([0, 0, 10], [1, 0, 0], 1.0, 1.0, F)
    src = np.array([40.0, -30.0, 10.0])
    inc = (u.center - src) / np.linalg.norm(u.center - src)
    az = np.radians(np.arange(-80, 81, 2))
    dirs = np.column_stack([np.cos(az), np.sin(az), np.zeros_like(az)])
    target = np.radians(20.0)
    ph = configure_anomalous_phase(u, inc, [np.cos(target), np.sin(target), 0.0])
    flat = np.abs(far_field_pattern(u, src, dirs)) ** 2
    steer = np.abs(far_field_pattern(u, src, dirs, phase=ph)) ** 2
    spec = specular_dir(inc, u.outward_normal)
    print(f"specular direction: {np.degrees(np.arctan2(spec[1], spec[0])):.1f} deg")
    print(f"flat surface peak:  {np.degrees(az[np.argmax(flat)]):.1f} deg")
    print(f"steered peak:       {np.degrees(az[np.argmax(steer)]):.1f} deg (target 20.0)")
    ref = flat.max()
    for a, p, q in zip(np.degrees(az)[::5], flat[::5], steer[::5]):
        print(f"  {a:6.1f} deg  flat {10 * np.log10(p / ref + 1e-30):7.1f} dB  steered {10 * np.log10(q / ref + 1e-30):7.1f} dB")


if __name__ == "__main__":
    main()
