import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrifem import build_structured_mesh, parse_msh, read_native, to_mesh, write_native
from dmrifem.errors import MeshFormatError, MshParseError
from dmrifem.mesh import marker_from_axis_breaks
from dmrifem.msh import MshDocument


def msh_text(nodes, elements, version="2.2 0 8"):
    lines = ["$MeshFormat", version, "$EndMeshFormat", "$Nodes", str(len(nodes))]
    lines += [f"{i} {x} {y} {z}" for i, (x, y, z) in nodes]
    lines += ["$EndNodes", "$Elements", str(len(elements))]
    lines += elements
    lines += ["$EndElements"]
    return "\n".join(lines) + "\n"


MINIMAL_LINE = msh_text([(1, (0.0, 0.0, 0.0)), (2, (1.0, 0.0, 0.0))],
                        ["1 1 2 0 0 1 2"])


class TestParse:
    def test_minimal_line_element(self):
        doc = parse_msh(MINIMAL_LINE)
        res = to_mesh(doc)
        assert res.mesh.num_cells == 1 and res.mesh.topo_dim == 1

    def test_physical_tag_becomes_marker(self):
        text = msh_text(
            [(i + 1, c) for i, c in enumerate(
                [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)])],
            ["1 4 2 7 0 1 2 3 4", "2 4 2 7 0 2 3 4 5"])
        res = to_mesh(parse_msh(text))
        assert list(res.marker) == [7, 7]

    def test_tet_markers_three_three_four(self):
        # 6 tetrahedra tagged {3,3,3,4,4,4} keep their physical tags as markers
        box = build_structured_mesh((0, 0, 0), (1, 1, 1), (1, 1, 1))
        nodes = [(i + 1, tuple(v)) for i, v in enumerate(box.vertices)]
        els = [f"{k + 1} 4 2 {3 if k < 3 else 4} 0 " + " ".join(str(v + 1) for v in c)
               for k, c in enumerate(box.cells)]
        res = to_mesh(parse_msh(msh_text(nodes, els)))
        assert list(res.marker) == [3, 3, 3, 4, 4, 4]

    def test_unsupported_version(self):
        with pytest.raises(MshParseError) as err:
            parse_msh(MINIMAL_LINE.replace("2.2 0 8", "3.0 0 8"))
        assert "3.0" in str(err.value) and err.value.line == 2

    def test_binary_flag_rejected(self):
        with pytest.raises(MshParseError):
            parse_msh(MINIMAL_LINE.replace("2.2 0 8", "2.2 1 8"))

    def test_missing_section(self):
        text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n"
        with pytest.raises(MshParseError, match="Nodes"):
            parse_msh(text)

    def test_malformed_count_reports_line(self):
        text = MINIMAL_LINE.replace("$Nodes\n2", "$Nodes\n3")
        with pytest.raises(MshParseError, match="count"):
            parse_msh(text)

    def test_unknown_section_warns(self):
        text = MINIMAL_LINE + "$Comment\nhello\n$EndComment\n"
        with pytest.warns(UserWarning, match="Comment"):
            parse_msh(text)

    def test_missing_node_reference(self):
        text = msh_text([(1, (0, 0, 0)), (2, (1, 0, 0))], ["1 1 2 0 0 1 9"])
        with pytest.raises(MshParseError, match="9"):
            to_mesh(parse_msh(text))

    def test_non_contiguous_ids_reindexed(self):
        text = msh_text([(10, (0, 0, 0)), (20, (1, 0, 0)), (31, (2, 0, 0))],
                        ["1 1 2 0 0 10 20", "2 1 2 0 0 20 31"])
        res = to_mesh(parse_msh(text))
        assert res.mesh.num_vertices == 3
        assert res.node_id_map == {10: 0, 20: 1, 31: 2}
        assert np.array_equal(res.mesh.cells, [[0, 1], [1, 2]])

    def test_triangles_only_make_2d_mesh(self):
        text = msh_text([(1, (0, 0, 0)), (2, (1, 0, 0)), (3, (0, 1, 0))],
                        ["1 2 1 5 1 2 3"])
        res = to_mesh(parse_msh(text))
        assert res.mesh.topo_dim == 2 and res.mesh.embed_dim == 2

    def test_boundary_facet_tags(self):
        text = msh_text([(1, (0, 0, 0)), (2, (1, 0, 0)), (3, (0, 1, 0))],
                        ["1 2 1 5 1 2 3", "2 1 1 9 1 2"])
        res = to_mesh(parse_msh(text))
        assert res.facet_tags == {(0, 1): 9}

    def test_line_elements_keep_3d_embedding(self):
        text = msh_text([(1, (0, 0, 0)), (2, (1, 1, 1))], ["1 1 2 0 0 1 2"])
        res = to_mesh(parse_msh(text))
        assert res.mesh.embed_dim == 3

    def test_dimension_gap_rejected(self):
        text = msh_text(
            [(i + 1, c) for i, c in enumerate(
                [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)])],
            ["1 4 0 1 2 3 4", "2 1 0 1 2"])
        with pytest.raises(MshParseError, match="dimension"):
            to_mesh(parse_msh(text))

    def test_unsupported_element_type(self):
        text = msh_text([(1, (0, 0, 0)), (2, (1, 0, 0))], ["1 8 0 1 2"])
        with pytest.raises(MshParseError):
            parse_msh(text)

    @settings(max_examples=200, deadline=None)
    @given(st.binary(max_size=400))
    def test_fuzz_never_panics(self, blob):
        try:
            parse_msh(blob)
        except MshParseError:
            pass

    @settings(max_examples=100, deadline=None)
    @given(st.text(max_size=300))
    def test_fuzz_text_never_panics(self, text):
        try:
            parse_msh(text)
        except MshParseError:
            pass


class TestNativeFormat:
    def test_round_trip_identity(self):
        mesh = build_structured_mesh((0, 0, 0), (1, 1, 1), (2, 2, 2))
        text = write_native(mesh)
        back, marker = read_native(text)
        assert marker is None
        assert np.array_equal(back.vertices, mesh.vertices)  # bit-identical
        assert np.array_equal(back.cells, mesh.cells)

    def test_round_trip_awkward_floats(self):
        verts = np.array([[0.1], [1.0 / 3.0], [np.nextafter(0.5, 1.0)]])
        mesh_in = build_structured_mesh(0.0, 1.0, 2)
        mesh_in.vertices[:] = verts
        back, _ = read_native(write_native(mesh_in))
        assert np.array_equal(back.vertices, verts)

    def test_markers_preserved(self, interval_mesh):
        marker = marker_from_axis_breaks(interval_mesh, 0, [5.0])
        back, m2 = read_native(write_native(interval_mesh, marker))
        assert np.array_equal(m2, marker)

    def test_truncated_file_reports_offset(self):
        mesh = build_structured_mesh(0.0, 1.0, 3)
        text = write_native(mesh)
        with pytest.raises(MeshFormatError) as err:
            read_native(text[: len(text) // 2])
        assert err.value.offset is not None

    def test_bad_header(self):
        with pytest.raises(MeshFormatError):
            read_native("btmesh 2 1 1 2 1\n0.0\n1.0\n0 1\n")

    def test_trailing_garbage(self):
        mesh = build_structured_mesh(0.0, 1.0, 2)
        with pytest.raises(MeshFormatError):
            read_native(write_native(mesh) + "surprise\n")


def test_parse_accepts_bytes():
    doc = parse_msh(MINIMAL_LINE.encode("ascii"))
    assert isinstance(doc, MshDocument)


def test_non_ascii_rejected():
    with pytest.raises(MshParseError):
        parse_msh("\xff\xfe$MeshFormat".encode("utf-16"))
