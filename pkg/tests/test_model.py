import math

import numpy as np
import pytest

from cpfield import model as mdl
from cpfield import mc
from cpfield.geometry import Pose2, RobotSpec

from _helpers import (
    constant_head_member,
    constant_prediction_member,
    random_queries,
    tiny_arch,
)


def query_at(nx, ny=0.0):
    return np.array([nx, ny, 0.3, 2.0, 1.0, 0.2, 0.2, 0.1, 0.05, 0.05])


class TestFourierEncoder:
    def test_zero_input_gives_zero_sin_unit_cos(self):
        enc = mdl.FourierEncoder.create(seed=1)
        feat = enc.encode_group("position", np.zeros((1, 2)))[0]
        nf = enc.n_frequencies
        assert np.allclose(feat[:nf], 0.0)
        assert np.allclose(feat[nf:], 1.0)

    def test_deterministic_given_seed(self):
        a = mdl.FourierEncoder.create(seed=9)
        b = mdl.FourierEncoder.create(seed=9)
        v = np.array([[0.3, -1.2]])
        assert np.array_equal(a.encode_group("position", v), b.encode_group("position", v))

    def test_lipschitz_bound(self):
        enc = mdl.FourierEncoder.create(seed=4)
        rng = np.random.default_rng(0)
        F = enc.frequencies["sigma"]
        bound_norm = np.linalg.norm(F, 2)
        for _ in range(50):
            v = rng.normal(size=(1, 5))
            d = rng.normal(size=(1, 5)) * 1e-3
            fa = enc.encode_group("sigma", v)
            fb = enc.encode_group("sigma", v + d)
            dist = np.linalg.norm(fa - fb)
            assert dist <= 2 * math.pi * bound_norm * np.linalg.norm(d) + 1e-12

    def test_group_dim_mismatch_rejected(self):
        enc = mdl.FourierEncoder.create(seed=1)
        with pytest.raises(ValueError):
            enc.encode_group("position", np.zeros((1, 3)))


class TestForward:
    def test_far_field_formula(self):
        member = constant_head_member(f=0.5, alpha1=21, alpha2=21, rho1=5.0, rho2=6.0)
        out = mdl.forward(member, query_at(20.0))
        assert out["alpha1"] == pytest.approx(21.0, abs=1e-9)
        assert out["rho1"] == pytest.approx(5.0, abs=1e-9)
        assert out["rho2"] == pytest.approx(6.0, abs=1e-9)
        assert out["p_hat"] <= 1e-6

    def test_near_field_formula(self):
        member = constant_head_member(f=0.5, alpha1=21, alpha2=21, rho1=5.0, rho2=6.0)
        out = mdl.forward(member, query_at(0.0))
        assert out["p_hat"] >= 1 - 1e-6

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            member = mdl.init_member(tiny_arch(), seed)
            q = random_queries(rng, 200)
            p = mdl.member_forward(member, q)["p_hat"]
            assert np.all((p >= 0.0) & (p <= 1.0))

    def test_rejects_non_finite_input(self):
        member = mdl.init_member(tiny_arch(), 0)
        bad = query_at(1.0)
        bad[3] = math.nan
        with pytest.raises(ValueError):
            mdl.forward(member, bad)

    def test_accepts_cp_query(self):
        member = mdl.init_member(tiny_arch(), 0)
        q = mc.CpQuery(
            Pose2(3.0, 1.0, 0.2),
            RobotSpec(),
            mc.ObstacleSpec((0, 0, 0, 2.0, 1.0), (0.1, 0.1, 0.1, 0.0, 0.0)),
        )
        out = mdl.forward(member, q)
        assert 0.0 <= out["p_hat"] <= 1.0

    def test_shaping_outputs_depend_on_angle_not_radius(self):
        member = mdl.init_member(tiny_arch(), 1)
        base = query_at(2.0, 1.0)
        scaled = base.copy()
        scaled[:2] *= 3.7  # same polar angle, different radius
        a = mdl.forward(member, base)
        b = mdl.forward(member, scaled)
        for key in ("alpha1", "alpha2", "rho1", "rho2"):
            assert a[key] == pytest.approx(b[key], abs=1e-12)


class TestStructuralBounds:
    def test_far_field_bound(self):
        rng = np.random.default_rng(11)
        for seed in range(10):
            member = mdl.init_member(tiny_arch(), seed)
            q = random_queries(rng, 50)
            out = mdl.member_forward(member, q)
            radius = np.maximum(out["rho1"], out["rho2"]) + 6.0 + rng.uniform(0, 4, 50)
            scale = radius / np.hypot(q[:, 0], q[:, 1])
            far = q.copy()
            far[:, 0] *= scale
            far[:, 1] *= scale
            p = mdl.member_forward(member, far)["p_hat"]
            assert np.all(p < 0.005)

    def test_near_field_bound(self):
        rng = np.random.default_rng(13)
        for seed in range(10):
            member = mdl.init_member(tiny_arch(), seed)
            # force rho1 >= 6 via the head bias
            member.params.shaping.weights[-1][:, 2] = 0.0
            member.params.shaping.biases[-1][2] = 1.0  # rho1 = 12*sigmoid(1) ~ 8.77
            q = random_queries(rng, 50)
            out = mdl.member_forward(member, q)
            rho1 = out["rho1"]
            assert np.all(rho1 >= 6.0)
            radius = np.maximum(rho1 - 6.0 - rng.uniform(0, 2, 50), 1e-3)
            scale = radius / np.hypot(q[:, 0], q[:, 1])
            near = q.copy()
            near[:, 0] *= scale
            near[:, 1] *= scale
            p = mdl.member_forward(member, near)["p_hat"]
            assert np.all(p > 0.9975)


class TestEnsemble:
    def probe_query(self):
        return query_at(5.0)

    def test_identical_members_agree_across_modes(self):
        members = [constant_prediction_member(0.2, seed=s) for s in range(3)]
        for mode in mdl.MODES:
            model = mdl.EnsembleModel(members=members, mode=mode, arch=tiny_arch())
            assert mdl.ensemble_predict(model, self.probe_query()) == pytest.approx(0.2, abs=1e-6)

    def test_max_mode(self):
        members = [constant_prediction_member(p, seed=i) for i, p in enumerate((0.1, 0.3))]
        model = mdl.EnsembleModel(members=members, mode="max", arch=tiny_arch())
        assert mdl.ensemble_predict(model, self.probe_query()) == pytest.approx(0.3, abs=1e-6)

    def test_ci_upper_closed_form(self):
        members = [constant_prediction_member(p, seed=i) for i, p in enumerate((0.1, 0.2, 0.3))]
        model = mdl.EnsembleModel(members=members, mode="ci_upper", arch=tiny_arch())
        expect = 0.2 + 1.96 * 0.1 / math.sqrt(3)
        assert mdl.ensemble_predict(model, self.probe_query()) == pytest.approx(expect, abs=1e-5)
        assert expect == pytest.approx(0.3132, abs=5e-5)

    def test_ci_mode_needs_two_members(self):
        member = constant_prediction_member(0.5)
        with pytest.raises(ValueError):
            mdl.EnsembleModel(members=[member], mode="ci_upper", arch=tiny_arch())
        model = mdl.EnsembleModel(members=[member], mode="mean", arch=tiny_arch())
        with pytest.raises(ValueError):
            mdl.ensemble_predict(model, self.probe_query(), mode="ci_lower")

    def test_mode_ordering_invariant(self):
        rng = np.random.default_rng(17)
        members = [mdl.init_member(tiny_arch(), s) for s in range(5)]
        model = mdl.EnsembleModel(members=members, mode="mean", arch=tiny_arch())
        q = random_queries(rng, 100)
        lo = mdl.ensemble_predict(model, q, mode="ci_lower")
        mean = mdl.ensemble_predict(model, q, mode="mean")
        hi = mdl.ensemble_predict(model, q, mode="ci_upper")
        mx = mdl.ensemble_predict(model, q, mode="max")
        preds = mdl.member_predictions(model, q)
        shift = 1.96 * preds.std(axis=0, ddof=1) / math.sqrt(5)
        assert np.all(lo <= mean + 1e-12)
        assert np.all(mean <= hi + 1e-12)
        assert np.all(hi <= np.clip(mx + shift, 0, 1) + 1e-12)
        assert np.all(mean <= mx + 1e-12)


class TestSaveLoad:
    def make_model(self):
        members = [mdl.init_member(tiny_arch(), s) for s in range(2)]
        return mdl.EnsembleModel(members=members, mode="ci_upper", arch=tiny_arch())

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "model.cpf"
        mdl.save_model(model, path)
        loaded = mdl.load_model(path)
        rng = np.random.default_rng(23)
        q = random_queries(rng, 100)
        a = mdl.ensemble_predict(model, q)
        b = mdl.ensemble_predict(loaded, q)
        assert np.array_equal(a, b)
        assert loaded.mode == "ci_upper"
        assert loaded.arch == model.arch

    def test_corrupted_magic_rejected(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "model.cpf"
        mdl.save_model(model, path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(mdl.ModelFormatError):
            mdl.load_model(path)

    def test_truncation_rejected(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "model.cpf"
        mdl.save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 64])
        with pytest.raises(mdl.ModelFormatError):
            mdl.load_model(path)

    def test_blobs_are_little_endian_float64(self, tmp_path):
        # the declared byte layout is fixed regardless of platform defaults
        model = self.make_model()
        path = tmp_path / "model.cpf"
        mdl.save_model(model, path)
        data = path.read_bytes()
        head_len = int.from_bytes(data[8:16], "little")
        first = model.members[0]
        name0, arr0 = sorted(first.encoder.frequencies.items())[0]
        raw = data[16 + head_len : 16 + head_len + arr0.size * 8]
        assert np.array_equal(
            np.frombuffer(raw, dtype="<f8").reshape(arr0.shape), arr0
        )
