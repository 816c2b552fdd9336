"""
Unit tests for capture parsing and registry construction.
"""

import itertools
import json

import numpy as np
import pytest

from core.errors import ConfigError, EmptyRegistryError, NonFiniteValueError, ParseError, SchemaError
from services.model_zoo import (
    build_registry,
    conditioning_values,
    export_registry,
    lstm_param_count,
    parse_model_file,
    registry_from_models,
    serialize_model,
)
from utils.toy_data import toy_capture, toy_captures, write_toy_captures


def _capture_document(hidden: int = 2, inputs: int = 1, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    gates = 4 * hidden
    return {
        "model_data": {"model": "SimpleRNN", "unit_type": "LSTM", "num_layers": 1, "input_size": inputs,
                       "hidden_size": hidden, "output_size": 1, "skip": 0, "name": "amp"},
        "state_dict": {
            "rec.weight_ih_l0": rng.standard_normal((gates, inputs)).tolist(),
            "rec.weight_hh_l0": rng.standard_normal((gates, hidden)).tolist(),
            "rec.bias_ih_l0": rng.standard_normal(gates).tolist(),
            "rec.bias_hh_l0": rng.standard_normal(gates).tolist(),
            "lin.weight": [rng.standard_normal(hidden).tolist()],
            "lin.bias": [0.1],
        },
    }


def _encode(document: dict) -> bytes:
    return json.dumps(document).encode("utf-8")


def _brute_force_count(document: dict) -> int:
    def count(value) -> int:
        if isinstance(value, list):
            return sum(count(v) for v in value)
        return 1
    return sum(count(v) for v in document["state_dict"].values())


class TestParseModelFile:
    """Test capture parsing and validation."""

    def test_parse_valid(self) -> None:
        """Test that a valid capture parses with the declared shapes."""
        model = parse_model_file(_encode(_capture_document(hidden=3, inputs=2)))
        assert model.hidden_size == 3
        assert model.conditioned
        assert model.weight_ih.shape == (12, 2)
        assert model.head_weight.shape == (3,)
        assert model.head_bias == pytest.approx(0.1)

    def test_name_falls_back_to_argument(self) -> None:
        """Test that a capture without a name takes the supplied one."""
        document = _capture_document()
        del document["model_data"]["name"]
        assert parse_model_file(_encode(document), name="stem").name == "stem"

    def test_not_json(self) -> None:
        """Test that non-JSON and non-UTF-8 bytes are parse errors."""
        with pytest.raises(ParseError):
            parse_model_file(b"{oops")
        with pytest.raises(ParseError):
            parse_model_file(b"\xff\xfe\x00")

    def test_schema_errors(self) -> None:
        """Test missing keys, wrong sizes and unsupported architectures."""
        document = _capture_document()
        del document["state_dict"]["rec.bias_hh_l0"]
        with pytest.raises(SchemaError):
            parse_model_file(_encode(document))

        document = _capture_document()
        document["state_dict"]["lin.weight"] = [[1.0]]
        with pytest.raises(SchemaError):
            parse_model_file(_encode(document))

        document = _capture_document()
        document["model_data"]["unit_type"] = "GRU"
        with pytest.raises(SchemaError):
            parse_model_file(_encode(document))

        document = _capture_document()
        document["model_data"]["num_layers"] = 2
        with pytest.raises(SchemaError):
            parse_model_file(_encode(document))

    def test_non_finite_weight(self) -> None:
        """Test that NaN weights raise a ValueError subclass."""
        text = _encode(_capture_document()).decode().replace('"lin.bias": [0.1]', '"lin.bias": [NaN]')
        with pytest.raises(NonFiniteValueError):
            parse_model_file(text.encode())
        with pytest.raises(ValueError):
            parse_model_file(text.encode())

    def test_serialize_inverts_parse(self) -> None:
        """Test that serialize_model output parses back to the same weights."""
        model = parse_model_file(_encode(_capture_document(hidden=4, inputs=2, seed=3)))
        again = parse_model_file(serialize_model(model))
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(again.parameters()[name], value)
        assert again.name == model.name


class TestParameterCount:
    """Test the LSTM parameter-count formula."""

    @pytest.mark.parametrize("hidden,inputs,expected", [(40, 1, 6921), (40, 2, 7081), (2, 1, 43), (1, 1, 18)])
    def test_formula(self, hidden: int, inputs: int, expected: int) -> None:
        """Test the closed form against known values."""
        document = _capture_document(hidden=hidden, inputs=inputs)
        model = parse_model_file(_encode(document))
        assert lstm_param_count(model) == expected
        assert _brute_force_count(document) == expected


class TestRegistry:
    """Test registry expansion and directory loading."""

    def test_conditioning_values(self) -> None:
        """Test linear spacing and the single-point case."""
        assert conditioning_values(5) == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert conditioning_values(1) == [0.5]
        with pytest.raises(ConfigError):
            conditioning_values(0)

    def test_expansion_and_order(self) -> None:
        """Test that conditioned captures expand and ordering is by name."""
        plain = toy_capture("b_plain", 1.0)
        cond = toy_capture("a_cond", 2.0, conditioned=True)
        other = toy_capture("c_plain", 3.0)
        registry = registry_from_models([("p/b.json", plain), ("p/a.json", cond), ("p/c.json", other)], cond_points=5)
        assert registry.M == 7
        assert [d.model.name for d in registry][:5] == ["a_cond"] * 5
        assert [d.conditioning_value for d in registry][:5] == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert registry.device(5).model.name == "b_plain"
        assert registry.device(5).conditioning_value is None
        assert [d.device_id for d in registry] == list(range(7))

    def test_empty_inputs(self, tmp_path) -> None:
        """Test that no usable captures is an EmptyRegistryError."""
        with pytest.raises(EmptyRegistryError):
            registry_from_models([])
        with pytest.raises(EmptyRegistryError):
            build_registry(str(tmp_path))

    def test_build_skips_bad_files(self, tmp_path) -> None:
        """Test that broken files are recorded as failures and the rest load."""
        write_toy_captures(toy_captures(3), str(tmp_path))
        (tmp_path / "broken.json").write_text("{")
        registry = build_registry(str(tmp_path), cond_points=5, workers=2)
        assert registry.M == 3
        assert len(registry.failures) == 1
        assert registry.failures[0][0].endswith("broken.json")

    def test_build_is_order_independent_of_workers(self, tmp_path) -> None:
        """Test that parallel parsing yields the same registry order."""
        write_toy_captures(toy_captures(6), str(tmp_path))
        one = [d.label for d in build_registry(str(tmp_path), workers=1)]
        many = [d.label for d in build_registry(str(tmp_path), workers=4)]
        assert one == many

    def test_all_failed(self, tmp_path) -> None:
        """Test that a directory of only broken files fails."""
        (tmp_path / "x.json").write_text("[]")
        with pytest.raises(EmptyRegistryError):
            build_registry(str(tmp_path))

    def test_export_registry(self, tmp_path) -> None:
        """Test the exported manifest."""
        registry = registry_from_models([(f"{m.name}.json", m) for m in toy_captures(2)])
        path = export_registry(registry, str(tmp_path / "registry.json"))
        payload = json.loads(path.read_text())
        assert payload["M"] == 2
        assert [row["param_count"] for row in payload["devices"]] == [18, 18]

    def test_combinations_are_distinct_devices(self) -> None:
        """Test that every (capture, value) pair appears exactly once."""
        models = [toy_capture(f"m{k}", 1.0 + k, conditioned=True) for k in range(2)]
        registry = registry_from_models([(m.name, m) for m in models], cond_points=3)
        pairs = {(d.model.name, d.conditioning_value) for d in registry}
        assert pairs == set(itertools.product(["m0", "m1"], [0.0, 0.5, 1.0]))


if __name__ == "__main__":
    pytest.main([__file__])
