"""Tests for drift parser."""

import numpy as np
import pytest

from sdebounds.drift_parser import DriftParser, compile_expression, default_suite
from sdebounds.exceptions import DriftParsingError, LookaheadError
from sdebounds.sde_lab import PathView


def make_view(current, running_max=None, step=4, dt=0.25, history=None):
    current = np.asarray(current, dtype=float).reshape(-1, 1)
    if running_max is None:
        running_max = current
    return PathView(current, np.asarray(running_max, float).reshape(-1, 1), step, dt, history)


def test_parse_builtin_worst_drift():
    """Test parsing a shifted worst-case drift."""
    parser = DriftParser(C=2.0)

    drift = parser.parse("worst-minus@1.0")

    assert drift.bound_C == 2.0
    assert drift.description == "worst-minus@1.0"
    values = drift.func(make_view([0.0, 1.0, 3.0]))
    assert np.allclose(values.ravel(), [2.0, 0.0, -2.0])


def test_parse_builtin_constant():
    """Test constant drifts default to the bound and respect it."""
    parser = DriftParser(C=1.0)

    assert np.allclose(parser.parse("const").func(make_view([0.3])), 1.0)
    assert np.allclose(parser.parse("const@-0.5").func(make_view([0.3])), -0.5)
    with pytest.raises(DriftParsingError, match="exceeds the bound"):
        parser.parse("const@3")


def test_parse_expression():
    """Test parsing an expression over state, running max and time."""
    parser = DriftParser(C=1.0)

    drift = parser.parse("clamp(-5*x, -C, C) + 0*m + 0*t")
    values = drift.func(make_view([-1.0, 0.1, 1.0]))

    assert np.allclose(values.ravel(), [1.0, -0.5, -1.0])
    assert not drift.needs_history


def test_lagged_state_marks_history():
    """Test at() makes the drift request path history."""
    drift = compile_expression("C*sin(at(t/2))")
    history = np.arange(5, dtype=float).reshape(5, 1, 1)

    values = drift.func(make_view([9.0], step=4, dt=0.25, history=history))

    assert drift.needs_history
    # t = 1, lag t/2 = 0.5 is grid index 2
    assert np.allclose(values, np.sin(2.0))


def test_lagged_state_cannot_look_ahead():
    """Test at() beyond the current time raises."""
    drift = compile_expression("at(t + 1)")
    history = np.zeros((5, 1, 1))
    with pytest.raises(LookaheadError):
        drift.func(make_view([0.0], history=history))


@pytest.mark.parametrize(
    "source, message",
    [
        ("__import__('os')", "Unknown function"),
        ("x.real", "Unsupported syntax"),
        ("y + 1", "Unknown name"),
        ("clamp(x, 1)", "takes 3"),
        ("x +", "Invalid drift expression"),
        ("'text'", "Unsupported constant"),
        ("x if x else 1", "Unsupported syntax"),
    ],
)
def test_unsafe_or_invalid_expressions(source, message):
    """Test expressions outside the whitelist are rejected."""
    with pytest.raises(DriftParsingError, match=message):
        DriftParser().parse(source)


def test_parse_dict_suite():
    """Test parsing a drift suite with plain and named entries."""
    parser = DriftParser(C=1.0)

    suite = parser.parse_dict(
        {
            "C": 0.5,
            "drifts": ["zero", {"name": "wobble", "expr": "C*sin(x)"}],
        }
    )

    assert [d.description for d in suite] == ["zero", "wobble"]
    assert all(d.bound_C == 0.5 for d in suite)


def test_suite_bound_cannot_exceed_parser_bound():
    """Test a suite with a larger drift bound is rejected."""
    with pytest.raises(DriftParsingError, match="exceeds the verification bound"):
        DriftParser(C=1.0).parse_dict({"C": 2.0, "drifts": ["zero"]})


def test_validation_duplicate_drifts():
    """Test validation catches duplicate drift names."""
    parser = DriftParser()

    with pytest.raises(DriftParsingError, match="Duplicate drift names"):
        parser.parse_dict({"drifts": ["zero", "zero"]})


def test_suite_requires_drifts():
    """Test a suite without 'drifts' is rejected."""
    with pytest.raises(DriftParsingError, match="must include 'drifts'"):
        DriftParser().parse_dict({"C": 1.0})


def test_parse_file(tmp_path):
    """Test parsing a YAML drift suite."""
    path = tmp_path / "suite.yaml"
    path.write_text(
        "C: 1.0\n"
        "drifts:\n"
        "  - worst-plus@0.25\n"
        "  - name: lagged\n"
        "    expr: C*sin(at(t/2))\n",
        encoding="utf-8",
    )

    suite = DriftParser().parse_file(str(path))

    assert len(suite) == 2
    assert suite[1].needs_history


def test_parse_file_errors(tmp_path):
    """Test missing files and invalid YAML raise DriftParsingError."""
    with pytest.raises(DriftParsingError, match="not found"):
        DriftParser().parse_file(str(tmp_path / "missing.yaml"))

    broken = tmp_path / "broken.yaml"
    broken.write_text("drifts: [zero\n", encoding="utf-8")
    with pytest.raises(DriftParsingError, match="Invalid YAML"):
        DriftParser().parse_file(str(broken))


def test_default_suite():
    """Test the default suite has path-dependent members and unique names."""
    suite = default_suite(1.0)
    assert len(suite) >= 5
    assert any(d.needs_history for d in suite)
    assert len({d.description for d in suite}) == len(suite)
