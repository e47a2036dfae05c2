"""Writes the KITTI raw-layout fixtures used by the integration tests.

drive_0001: 20 frames at 10 Hz, heading east at 10 m/s, with feature tracks
projected from two walls of points. drive_0002: 5 stationary frames.
"""
import math
import os

import numpy as np

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "kitti", "2011_09_26")
G = 9.80665
R_EARTH = 6378137.0
LAT0, LON0, ALT0 = 49.011, 8.4236, 112.0

R_VI = np.eye(3)
T_VI = np.array([-0.81, 0.32, -0.80])
R_CV = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
T_CV = np.array([0.0, -0.08, -0.27])
K = np.array([[721.5, 0.0, 609.6], [0.0, 721.5, 172.9], [0.0, 0.0, 1.0]])
W, H = 1242, 375


def fmt(xs):
    return " ".join(repr(float(x)) for x in xs)


def write_calib(root):
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "calib_imu_to_velo.txt"), "w") as f:
        f.write("calib_time: 25-May-2012 12:47:21\n")
        f.write("R: " + fmt(R_VI.ravel()) + "\nT: " + fmt(T_VI) + "\n")
    with open(os.path.join(root, "calib_velo_to_cam.txt"), "w") as f:
        f.write("calib_time: 15-Mar-2012 11:37:16\n")
        f.write("R: " + fmt(R_CV.ravel()) + "\nT: " + fmt(T_CV) + "\n")
        f.write("delta_f: 0.0 0.0\ndelta_c: 0.0 0.0\n")
    with open(os.path.join(root, "calib_cam_to_cam.txt"), "w") as f:
        f.write("calib_time: 09-Jan-2012 13:57:47\ncorner_dist: 9.950000e-02\n")
        for i in range(2):
            p = np.hstack([K, np.array([[-386.1448 * i], [0.0], [0.0]])])
            f.write(f"S_rect_{i:02d}: {W}.0 {H}.0\n")
            f.write(f"R_rect_{i:02d}: " + fmt(np.eye(3).ravel()) + "\n")
            f.write(f"P_rect_{i:02d}: " + fmt(p.ravel()) + "\n")


def oxts_line(lat, lon, alt, vn, ve, vf):
    v = [0.0] * 30
    v[0], v[1], v[2] = lat, lon, alt
    v[6], v[7], v[8] = vn, ve, vf
    v[13] = G
    v[14] = 0.0
    v[22], v[23] = 0.2, 0.05
    v[24], v[25], v[26], v[27], v[28] = 4, 10, 4, 4, 6
    out = []
    for i, x in enumerate(v):
        out.append(str(int(x)) if i >= 24 else repr(float(x)))
    return " ".join(out)


def write_drive(name, positions, speed):
    d = os.path.join(ROOT, name, "oxts")
    os.makedirs(os.path.join(d, "data"), exist_ok=True)
    scale = math.cos(math.radians(LAT0))
    with open(os.path.join(d, "timestamps.txt"), "w") as f:
        for k in range(len(positions)):
            s = 10.0 + 0.1 * k
            f.write(f"2011-09-26 13:02:{s:012.9f}\n")
    for k, p in enumerate(positions):
        lon = LON0 + math.degrees(p[0] / (scale * R_EARTH))
        lat = LAT0 + math.degrees(p[1] / (scale * R_EARTH))
        with open(os.path.join(d, "data", f"{k:010d}.txt"), "w") as f:
            f.write(oxts_line(lat, lon, ALT0 + p[2], 0.0, speed, speed) + "\n")


def project(point, p_imu):
    x_imu = point - p_imu
    x_cam = R_CV @ (R_VI @ x_imu + T_VI) + T_CV
    if x_cam[2] < 1.0:
        return None
    u = K @ (x_cam / x_cam[2])
    if 0 <= u[0] < W and 0 <= u[1] < H:
        return u[:2]
    return None


def main():
    write_calib(ROOT)
    frames = 20
    positions = [np.array([10.0 * 0.1 * k, 0.0, 0.0]) for k in range(frames)]
    write_drive("2011_09_26_drive_0001_sync", positions, 10.0)
    rng = np.random.default_rng(7)
    points = []
    for side in (-7.0, 7.0):
        for x in np.arange(6.0, 60.0, 1.5):
            points.append(np.array([x, side, rng.uniform(-1.0, 3.0)]))
    rows = []
    for tid, pt in enumerate(points):
        for k, p in enumerate(positions):
            uv = project(pt, p)
            if uv is not None:
                rows.append((k, tid, uv[0], uv[1]))
    rows.sort()
    with open(os.path.join(ROOT, "2011_09_26_drive_0001_sync", "tracks.csv"), "w") as f:
        f.write("frame,track_id,u,v\n")
        for k, tid, u, v in rows:
            f.write(f"{k},{tid},{float(u)!r},{float(v)!r}\n")
    write_drive("2011_09_26_drive_0002_sync", [np.zeros(3)] * 5, 0.0)


if __name__ == "__main__":
    main()
