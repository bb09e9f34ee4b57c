import json

import numpy as np
import pytest

from spgadmm.blockspace import BlockVector
from spgadmm.errors import DimensionError, ParseError, ValidationError
from spgadmm.problem import (
    FAMILIES,
    InstanceDims,
    IterateTriple,
    KnownSolution,
    dumps_instance,
    generate_with_known_kkt,
    kkt_residual,
    load_instance,
    loads_instance,
    save_instance,
)

from conftest import SMALL


def random_u(inst, rng, scale=2.0):
    return IterateTriple(rng.standard_normal(inst.ny) * scale, rng.standard_normal(inst.nz) * scale,
                         rng.standard_normal(inst.nx) * scale)


class TestKKTResidual:
    def test_zero_at_known_solution(self, small_instance):
        inst, sol = small_instance
        assert kkt_residual(inst, sol).norm() <= 1e-10

    def test_blocks_are_typed(self, small_instance):
        inst, sol = small_instance
        r = kkt_residual(inst, sol)
        assert isinstance(r, BlockVector)
        assert r.dims == inst.y_dims + inst.z_dims + inst.x_dims

    def test_feasibility_perturbation(self, small_instance, rng):
        inst, sol = small_instance
        # moving c keeps the two subdifferential relations exact
        d = rng.standard_normal(inst.nx)
        shifted = type(inst)(inst.f, inst.g, inst.A, inst.B, inst.c - d, inst.x_dims)
        r = kkt_residual(shifted, sol).blocks
        third = r[-1] if len(inst.x_dims) == 1 else np.concatenate(r[-len(inst.x_dims):])
        np.testing.assert_array_equal(third, inst.A.matrix.T @ sol.y + inst.B.matrix.T @ sol.z - (inst.c - d))
        np.testing.assert_allclose(third, d, atol=1e-12)
        assert np.linalg.norm(kkt_residual(shifted, sol).data[: inst.ny + inst.nz]) <= 1e-10

    def test_matches_reassembly(self, small_instance, rng):
        inst, _ = small_instance
        A, B = inst.A.matrix, inst.B.matrix
        for _ in range(20):
            u = random_u(inst, rng)
            expected = np.concatenate([
                u.y - inst.f.prox(u.y + A @ u.x, 1.0),
                u.z - inst.g.prox(u.z + B @ u.x, 1.0),
                A.T @ u.y + B.T @ u.z - inst.c,
            ])
            assert np.max(np.abs(kkt_residual(inst, u).data - expected)) <= 1e-12

    def test_lipschitz_bound(self, small_instance, rng):
        inst, _ = small_instance
        L = 2 + 2 * inst.A.norm + 2 * inst.B.norm
        for _ in range(50):
            u, v = random_u(inst, rng), random_u(inst, rng)
            gap = (kkt_residual(inst, u) - kkt_residual(inst, v)).norm()
            assert gap <= L * np.linalg.norm(u.stacked() - v.stacked()) * (1 + 1e-12)

    def test_dimension_mismatch(self, small_lasso):
        inst, _ = small_lasso
        with pytest.raises(DimensionError):
            kkt_residual(inst, IterateTriple(np.zeros(3), np.zeros(inst.nz), np.zeros(inst.nx)))


class TestGenerator:
    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("seed", range(5))
    def test_known_solution_invariants(self, family, seed):
        inst, sol = generate_with_known_kkt(seed, SMALL, family)
        d_f, d_g, feas = sol.memberships(inst)
        assert d_f <= 1e-9 and d_g <= 1e-9
        assert feas <= 1e-10
        assert kkt_residual(inst, sol).norm() <= 1e-9

    def test_c_bit_for_bit(self, small_instance):
        inst, sol = small_instance
        c = inst.A.matrix.T @ sol.y + inst.B.matrix.T @ sol.z
        assert np.array_equal(c, inst.c)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_deterministic(self, family):
        a = dumps_instance(*generate_with_known_kkt(5, SMALL, family))
        b = dumps_instance(*generate_with_known_kkt(5, SMALL, family))
        assert a == b
        assert a != dumps_instance(*generate_with_known_kkt(6, SMALL, family))

    def test_families_have_expected_parts(self):
        inst, _ = generate_with_known_kkt(0, SMALL, "lasso")
        assert inst.f.nonsmooth.kind == "l1" and inst.g.nonsmooth.is_zero
        inst, _ = generate_with_known_kkt(0, SMALL, "box-qp")
        assert inst.f.nonsmooth.kind == "box"
        assert np.all(inst.f.nonsmooth.lo <= 0) and np.all(inst.f.nonsmooth.hi >= 0)

    def test_l1_zero_coordinates_strictly_inside(self):
        inst, sol = generate_with_known_kkt(2, InstanceDims((40, 10), (5,), 50), "lasso")
        n1 = inst.y_dims[0]
        g = inst.A.matrix @ sol.x - inst.f.gradient_smooth(sol.y)
        zero = sol.y[:n1] == 0
        assert zero.any()
        assert np.all(np.abs(g[:n1][zero]) <= 0.9 * inst.f.nonsmooth.weight + 1e-12)

    def test_invalid_family(self):
        with pytest.raises(ValueError):
            generate_with_known_kkt(0, SMALL, "sdp")

    def test_nonsmooth_block_needs_room(self):
        with pytest.raises(ValueError):
            generate_with_known_kkt(0, InstanceDims((20, 5), (5,), 10), "lasso")


class TestSerialization:
    def test_round_trip(self, small_instance, tmp_path):
        inst, sol = small_instance
        path = tmp_path / "p.json"
        save_instance(path, inst, sol)
        inst2, sol2 = load_instance(path)
        assert inst2 == inst
        assert sol2 == sol

    def test_missing_known_solution(self, small_lasso, tmp_path):
        inst, _ = small_lasso
        path = tmp_path / "p.json"
        save_instance(path, inst)
        inst2, sol2 = load_instance(path)
        assert sol2 is None and inst2 == inst

    def test_mismatched_c_names_field(self, small_lasso):
        doc = json.loads(dumps_instance(*small_lasso))
        doc["c"] = doc["c"][:-1]
        with pytest.raises(ValidationError, match="'c'"):
            loads_instance(json.dumps(doc))

    def test_malformed_json_reports_line(self, small_lasso):
        text = dumps_instance(*small_lasso).splitlines()
        text[3] = text[3] + " oops"
        with pytest.raises(ParseError, match="line 4"):
            loads_instance("\n".join(text))

    def test_missing_field(self, small_lasso):
        doc = json.loads(dumps_instance(*small_lasso))
        del doc["f"]["Q"]
        with pytest.raises(ParseError, match="f.*Q"):
            loads_instance(json.dumps(doc))

    def test_seventeen_digits(self, small_lasso):
        text = dumps_instance(*small_lasso)
        x = small_lasso[0].c[0]
        assert format(x, ".17g") in text
