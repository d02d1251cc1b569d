"""Read a mesh exported by the CLI with plyfile and check its layout."""
import subprocess
import sys
import tempfile
from pathlib import Path

from plyfile import PlyData


def main(cli):
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        subprocess.run([cli, "--seed", "2", "basis", "--out", str(tmp / "basis"), "--rings", "6",
                        "--segments", "8", "--exp-dim", "5", "--id-dim", "4", "--alb-dim", "3"],
                       check=True, stdout=subprocess.DEVNULL)
        subprocess.run([cli, "mesh", "--basis", str(tmp / "basis"), "--out", str(tmp / "face.ply")],
                       check=True, stdout=subprocess.DEVNULL)
        ply = PlyData.read(str(tmp / "face.ply"))

    assert ply.text, "expected ASCII PLY"
    names = [e.name for e in ply.elements]
    assert names == ["vertex", "face"], names
    vertex, face = ply["vertex"], ply["face"]
    props = [p.name for p in vertex.properties]
    assert props == ["x", "y", "z", "red", "green", "blue", "quality"], props
    assert vertex.count > 0 and face.count > 0
    for row in face.data["vertex_indices"]:
        assert len(row) == 3
        assert all(0 <= i < vertex.count for i in row)
    # mean face: no displacement anywhere
    assert all(q == 0.0 for q in vertex.data["quality"])
    print(f"ok: {vertex.count} vertices, {face.count} faces")


if __name__ == "__main__":
    main(sys.argv[1])
