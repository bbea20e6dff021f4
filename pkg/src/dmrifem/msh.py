"""Gmsh MSH 2.2 ASCII reader and the native line-oriented mesh format.

Only MSH 2.2 ASCII is accepted; element types are restricted to points,
lines, triangles and tetrahedra. The first element tag (the physical group
in MSH 2.2) becomes the compartment marker of the cell, 0 when untagged.

The native format is::

    btmesh 1 <embed_dim> <topo_dim> <n_vertices> <n_cells>
    <x> [<y> [<z>]]          one vertex per line, full-precision decimals
    ...
    <v0> <v1> ...            one cell per line
    ...
    markers                  optional section
    <m>                      one integer per cell

Vertex coordinates round-trip bit-identically (written with repr precision).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import MeshFormatError, MshParseError
from .mesh import Mesh

#: MSH element type -> (topological dimension, number of vertices)
_ELEMENT_TYPES = {15: (0, 1), 1: (1, 2), 2: (2, 3), 4: (3, 4)}


@dataclass
class MshElement:
    eid: int
    etype: int
    tags: tuple
    verts: tuple

    @property
    def dim(self):
        return _ELEMENT_TYPES[self.etype][0]

    @property
    def physical(self):
        return self.tags[0] if self.tags else 0


@dataclass
class MshDocument:
    version: str = "2.2"
    nodes: dict = field(default_factory=dict)       # original id -> (x, y, z)
    elements: list = field(default_factory=list)    # list of MshElement


def _decode(data) -> list[str]:
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("ascii")
        except UnicodeDecodeError as exc:
            raise MshParseError(f"input is not ASCII: {exc}") from None
    else:
        text = data
    return text.splitlines()


def parse_msh(data) -> MshDocument:
    """Parse an MSH 2.2 ASCII byte stream or string into an MshDocument.

    Mandatory sections are $MeshFormat, $Nodes and $Elements; unknown
    sections are skipped with a warning. All failures raise MshParseError
    with the offending line number.
    """
    lines = _decode(data)
    doc = MshDocument()
    seen = set()
    i = 0
    n = len(lines)

    def fail(msg, ln):
        raise MshParseError(msg, line=ln + 1)

    while i < n:
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if not line.startswith("$"):
            fail(f"expected a section header, got {line!r}", i)
        section = line[1:]
        end_tag = "$End" + section
        j = i + 1
        while j < n and lines[j].strip() != end_tag:
            j += 1
        if j >= n:
            fail(f"section ${section} is not terminated by {end_tag}", i)
        body = lines[i + 1 : j]

        if section == "MeshFormat":
            if not body:
                fail("empty $MeshFormat section", i)
            parts = body[0].split()
            if len(parts) < 3:
                fail(f"malformed format line {body[0]!r}", i + 1)
            version, binary = parts[0], parts[1]
            if version != "2.2":
                fail(f"unsupported MSH version {version!r} (only 2.2 ASCII)", i + 1)
            if binary != "0":
                fail("binary MSH files are not supported", i + 1)
            doc.version = version
            seen.add(section)
        elif section == "Nodes":
            if not body:
                fail("missing node count", i)
            try:
                count = int(body[0])
            except ValueError:
                fail(f"malformed node count {body[0]!r}", i + 1)
            if count != len(body) - 1:
                fail(f"node count {count} does not match {len(body) - 1} node lines", i + 1)
            for k, ln in enumerate(body[1:], start=i + 2):
                parts = ln.split()
                if len(parts) != 4:
                    fail(f"node line needs 'id x y z', got {ln!r}", k)
                try:
                    nid = int(parts[0])
                    xyz = tuple(float(p) for p in parts[1:])
                except ValueError:
                    fail(f"malformed node line {ln!r}", k)
                if nid in doc.nodes:
                    fail(f"duplicate node id {nid}", k)
                doc.nodes[nid] = xyz
            seen.add(section)
        elif section == "Elements":
            if not body:
                fail("missing element count", i)
            try:
                count = int(body[0])
            except ValueError:
                fail(f"malformed element count {body[0]!r}", i + 1)
            if count != len(body) - 1:
                fail(f"element count {count} does not match {len(body) - 1} element lines", i + 1)
            for k, ln in enumerate(body[1:], start=i + 2):
                parts = ln.split()
                try:
                    nums = [int(p) for p in parts]
                except ValueError:
                    fail(f"malformed element line {ln!r}", k)
                if len(nums) < 3:
                    fail(f"element line too short: {ln!r}", k)
                eid, etype, ntags = nums[0], nums[1], nums[2]
                if etype not in _ELEMENT_TYPES:
                    fail(f"unsupported element type {etype}", k)
                nverts = _ELEMENT_TYPES[etype][1]
                if len(nums) != 3 + ntags + nverts:
                    fail(f"element {eid}: expected {ntags} tags and {nverts} vertices", k)
                tags = tuple(nums[3 : 3 + ntags])
                verts = tuple(nums[3 + ntags :])
                doc.elements.append(MshElement(eid, etype, tags, verts))
            seen.add(section)
        else:
            warnings.warn(f"skipping unknown MSH section ${section}", stacklevel=2)
        i = j + 1

    for required in ("MeshFormat", "Nodes", "Elements"):
        if required not in seen:
            raise MshParseError(f"mandatory section ${required} is missing")
    return doc


class MeshFromMsh(NamedTuple):
    mesh: Mesh
    marker: np.ndarray
    facet_tags: dict           # sorted facet vertex tuple -> physical tag
    node_id_map: dict          # original MSH node id -> dense vertex index


def to_mesh(doc: MshDocument) -> MeshFromMsh:
    """Build a Mesh from the maximal-dimension elements of a document.

    Lower-dimensional elements one dimension down become facet tags; points
    are ignored. Elements more than one dimension below the cells cannot be
    interpreted and raise MshParseError.
    """
    if not doc.elements:
        raise MshParseError("document contains no elements")
    topo = max(el.dim for el in doc.elements)
    if topo == 0:
        raise MshParseError("document contains only point elements")
    for el in doc.elements:
        if el.dim not in (topo, topo - 1, 0):
            raise MshParseError(
                f"element {el.eid}: unsupported mix of dimensions "
                f"({el.dim} with {topo}-dimensional cells)")
        for v in el.verts:
            if v not in doc.nodes:
                raise MshParseError(f"element {el.eid} references missing node {v}")

    node_ids = sorted(doc.nodes)
    node_id_map = {nid: k for k, nid in enumerate(node_ids)}
    coords = np.array([doc.nodes[nid] for nid in node_ids], dtype=float)
    # drop trailing all-zero coordinate columns written by gmsh for lower dims
    embed = 3
    while embed > max(topo, 1) and np.all(coords[:, embed - 1] == 0.0):
        embed -= 1
    coords = coords[:, :embed]

    cells, marker = [], []
    facet_tags = {}
    for el in doc.elements:
        verts = tuple(node_id_map[v] for v in el.verts)
        if el.dim == topo:
            cells.append(verts)
            marker.append(el.physical)
        elif el.dim == topo - 1 and el.dim > 0:
            facet_tags[tuple(sorted(verts))] = el.physical
    mesh = Mesh(coords, np.array(cells, dtype=np.int64))
    return MeshFromMsh(mesh, np.array(marker, dtype=np.int64), facet_tags, node_id_map)


def read_msh(path) -> MeshFromMsh:
    with open(path, "rb") as fh:
        return to_mesh(parse_msh(fh.read()))


def write_native(mesh: Mesh, marker=None) -> str:
    """Serialize a mesh (and optional marker) to the native text format."""
    out = [f"btmesh 1 {mesh.embed_dim} {mesh.topo_dim} {mesh.num_vertices} {mesh.num_cells}"]
    for v in mesh.vertices:
        out.append(" ".join(repr(float(x)) for x in v))
    for c in mesh.cells:
        out.append(" ".join(str(int(x)) for x in c))
    if marker is not None:
        marker = np.asarray(marker, dtype=np.int64)
        if len(marker) != mesh.num_cells:
            raise ValueError("marker length does not match cell count")
        out.append("markers")
        out.extend(str(int(m)) for m in marker)
    return "\n".join(out) + "\n"


def read_native(text) -> tuple[Mesh, np.ndarray | None]:
    """Parse the native format; errors carry the byte offset of the bad line."""
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("ascii", errors="replace")
    lines = text.splitlines()
    offsets = []
    pos = 0
    for ln in lines:
        offsets.append(pos)
        pos += len(ln) + 1

    def fail(msg, idx):
        off = offsets[idx] if idx < len(offsets) else pos
        raise MeshFormatError(msg, offset=off)

    if not lines:
        raise MeshFormatError("empty file", offset=0)
    header = lines[0].split()
    if len(header) != 6 or header[0] != "btmesh" or header[1] != "1":
        fail(f"bad header {lines[0]!r}", 0)
    try:
        embed, topo, nv, nc = (int(x) for x in header[2:])
    except ValueError:
        fail(f"non-integer header fields in {lines[0]!r}", 0)
    need = 1 + nv + nc
    if len(lines) < need:
        fail(f"truncated file: expected at least {need} lines, got {len(lines)}",
             min(len(lines), need) - 1)
    verts = np.empty((nv, embed))
    for k in range(nv):
        parts = lines[1 + k].split()
        if len(parts) != embed:
            fail(f"vertex line has {len(parts)} coordinates, expected {embed}", 1 + k)
        try:
            verts[k] = [float(p) for p in parts]
        except ValueError:
            fail(f"malformed vertex line {lines[1 + k]!r}", 1 + k)
    cells = np.empty((nc, topo + 1), dtype=np.int64)
    for k in range(nc):
        parts = lines[1 + nv + k].split()
        if len(parts) != topo + 1:
            fail(f"cell line has {len(parts)} vertices, expected {topo + 1}", 1 + nv + k)
        try:
            cells[k] = [int(p) for p in parts]
        except ValueError:
            fail(f"malformed cell line {lines[1 + nv + k]!r}", 1 + nv + k)
    marker = None
    rest = [(i, ln.strip()) for i, ln in enumerate(lines[need:], start=need) if ln.strip()]
    if rest:
        idx0, first = rest[0]
        if first != "markers":
            fail(f"unexpected trailing content {first!r}", idx0)
        if len(rest) - 1 != nc:
            fail(f"markers section has {len(rest) - 1} entries, expected {nc}", idx0)
        try:
            marker = np.array([int(ln) for _, ln in rest[1:]], dtype=np.int64)
        except ValueError:
            fail("malformed marker entry", rest[1][0])
    return Mesh(verts, cells), marker


def save_native(path, mesh: Mesh, marker=None):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(write_native(mesh, marker))


def load_native(path) -> tuple[Mesh, np.ndarray | None]:
    with open(path, "rb") as fh:
        return read_native(fh.read())
