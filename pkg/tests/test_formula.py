import numpy as np
import pytest

from saekit.errors import InputError
from saekit.formula import build_design, parse_formula


class TestParseFormula:
    def test_main_effects(self):
        f = parse_formula("y ~ a + b")
        assert f.response == "y"
        assert f.terms == (("a",), ("b",))

    def test_interaction_only(self):
        f = parse_formula("y ~ a:b")
        assert f.terms == (("a", "b"),)

    def test_crossing_expands(self):
        f = parse_formula("y ~ log_ri * zeta")
        assert f.terms == (("log_ri",), ("zeta",), ("log_ri", "zeta"))
        assert f.n_params == 4

    def test_duplicate_terms_collapse(self):
        f = parse_formula("y ~ a + a + a:b + a:b")
        assert f.terms == (("a",), ("a", "b"))

    def test_explicit_intercept_token_ignored(self):
        f = parse_formula("y ~ 1 + a")
        assert f.terms == (("a",),)

    def test_intercept_removal_rejected(self):
        with pytest.raises(InputError, match="intercept"):
            parse_formula("y ~ 0 + a")
        with pytest.raises(InputError, match="intercept"):
            parse_formula("y ~ a - 1")

    def test_requires_single_tilde(self):
        with pytest.raises(InputError):
            parse_formula("y ~ a ~ b")
        with pytest.raises(InputError):
            parse_formula("just_a_name")

    def test_bad_identifier(self):
        with pytest.raises(InputError, match="bad variable name"):
            parse_formula("y ~ 2fast")


class TestBuildDesign:
    def test_columns_and_names(self):
        cols = {"a": np.array([1.0, 2.0, 3.0]), "b": np.array([2.0, 0.0, 1.0])}
        X, names = build_design(cols, parse_formula("y ~ a * b"))
        assert names == ["intercept", "a", "b", "a:b"]
        assert X.shape == (3, 4)
        assert np.array_equal(X[:, 0], np.ones(3))
        assert np.array_equal(X[:, 3], cols["a"] * cols["b"])

    def test_missing_column_reported(self):
        with pytest.raises(InputError, match="missing columns: b"):
            build_design({"a": np.ones(3)}, parse_formula("y ~ a + b"))

    def test_intercept_only(self):
        X, names = build_design({"a": np.zeros(5)}, parse_formula("y ~ 1"))
        assert X.shape == (5, 1)
        assert names == ["intercept"]
